//! Numerical laboratory for covering problems of confined lattice walks and
//! tilted random interlacements on blow-ups D_N = (N·D) ∩ Z^d.
//!
//! The crate is organized bottom-up:
//! - [`lattice`], [`stats`], [`constants`], [`rngstream`]: low-level helpers.
//! - [`domain`]: discrete blow-ups, targets and enlargements.
//! - [`spectral`]: the principal eigenpair of the killed walk and the
//!   confined-walk kernel.
//! - [`reference_ball`]: closed-form continuum quantities for the ball.
//! - [`walk`], [`segment`]: trajectory simulation and cover times.
//! - [`potential`]: tilted Green functions, equilibrium measures, capacities.
//! - [`interlacements`]: trace sampling and per-site cover levels.
//! - [`experiments`]: campaign statistics (extreme-value CDFs, late-point
//!   processes, coupling checks) and their reports.

pub mod constants;
pub mod domain;
pub mod lattice;
pub mod rngstream;
pub mod stats;

pub mod reference_ball;
pub mod spectral;

pub mod segment;
pub mod walk;

pub mod potential;

pub mod interlacements;

pub mod experiments;
pub mod report;
