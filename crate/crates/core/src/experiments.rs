//! Campaign-level statistics: cover-level distributions against the Gumbel
//! limit, late-point spatial statistics against the Poisson limit,
//! deterministic eigenvector sums, level-band volumes, capacity–eigenvector
//! comparisons, covariance bounds, and the walk/interlacement coupling
//! sandwich.
//!
//! Every theory curve is computed at run time from (g(0), α_Λ, κ_Λ) produced
//! by the lattice-constant, eigenpair and continuum-reference modules; no
//! theory numeral is hard-coded here.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{build_domain, build_target, Domain, DomainError, ShapeSpec, TargetSet};
use crate::interlacements::{cover_levels, sample_trace, target_points, InterlacementError};
use crate::potential::{
    equilibrium_measure, green_row_on, BoxSolver, EqMethod, EquilibriumMeasure, PotentialError,
    TiltField,
};
use crate::reference_ball::BallReference;
use crate::spectral::{solve_principal_eigenpair, ConfinedKernel, EigenPair, SpectralError};
use crate::walk::{run_cover, Start, WalkConfig, WalkError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Reference(#[from] crate::reference_ball::ReferenceError),
    #[error(transparent)]
    Interlacement(#[from] InterlacementError),
    #[error("an empirical covariance exceeds its theoretical bound: {0}")]
    BoundViolated(String),
}

/// Everything a ball-in-ball campaign needs: the blown-up domain, its
/// principal eigenpair, the inner target, the tilt field, and the continuum
/// reference constants.
pub struct BallCampaign {
    pub n: i64,
    pub eps: f64,
    pub domain: Domain,
    pub eig: EigenPair,
    pub kernel: ConfinedKernel,
    pub target: TargetSet,
    pub psi: TiltField,
    /// Target-site lattice coordinates, in target-index order.
    pub points: Vec<Vec<i64>>,
    pub g0: f64,
    /// Discrete α: min over Λ_N of φ_N².
    pub alpha_disc: f64,
    pub reference: BallReference,
    /// Continuum α_Λ = φ²(r0).
    pub alpha_cont: f64,
    /// Surface-integral κ_Λ.
    pub kappa: f64,
    /// Kill / truncation radius in lattice units.
    pub r_out: f64,
    eq: Option<EquilibriumMeasure>,
}

impl BallCampaign {
    /// Builds domain, eigenpair, target and tilt for the unit ball with an
    /// inner ball of radius `r0`. The equilibrium measure is solved lazily.
    pub fn new(n: i64, r0: f64, eps: f64, rout_factor: f64, tol: f64) -> Result<Self, ExperimentError> {
        let dim = 3;
        let shape = ShapeSpec::unit_ball(dim);
        let domain = build_domain(&shape, n)?;
        let eig = solve_principal_eigenpair(&domain, tol.min(1e-10), 2_000_000)?;
        let kernel = ConfinedKernel::new(&domain, &eig);
        let lambda_shape = ShapeSpec::ball(dim, vec![0.0; dim], r0);
        let target = build_target(&domain, &lambda_shape, eps)?;
        let psi = TiltField::from_target(&domain, &eig, &target);
        let points = target_points(&domain, &target);
        let alpha_disc = target
            .sites
            .iter()
            .map(|&i| eig.phi[i] * eig.phi[i])
            .fold(f64::INFINITY, f64::min);
        let reference = BallReference::new(dim, r0);
        let alpha_cont = reference.alpha();
        let kappa = reference.kappa().surface_integral;
        Ok(BallCampaign {
            n,
            eps,
            domain,
            eig,
            kernel,
            target,
            psi,
            points,
            g0: crate::constants::green_origin(dim),
            alpha_disc,
            reference,
            alpha_cont,
            kappa,
            r_out: rout_factor * n as f64,
            eq: None,
        })
    }

    /// Equilibrium measure of Λ_N in the tilted field (linear solve on the
    /// truncation box), computed once and cached.
    pub fn equilibrium(&mut self, tol: f64) -> Result<&EquilibriumMeasure, ExperimentError> {
        if self.eq.is_none() {
            let eq = equilibrium_measure(
                &self.psi,
                &self.points,
                EqMethod::LinearSolve,
                self.r_out.ceil() as i64,
                0.0,
                tol,
            )?;
            self.eq = Some(eq);
        }
        Ok(self.eq.as_ref().unwrap())
    }

    pub fn card(&self) -> f64 {
        self.points.len() as f64
    }

    pub fn log_card(&self) -> f64 {
        self.card().ln()
    }

    /// Cover-level threshold u_N^Λ(z) = (g(0)/α_disc)(log|Λ_N| − log log|Λ_N| + z).
    pub fn u_threshold(&self, z: f64) -> f64 {
        self.g0 / self.alpha_disc * (self.log_card() - self.log_card().ln() + z)
    }

    /// The same threshold without the −log log term (one-sided lower-bound scale).
    pub fn u_threshold_no_loglog(&self, z: f64) -> f64 {
        self.g0 / self.alpha_disc * (self.log_card() + z)
    }

    /// First-order cover scale g(0)·α⁻¹·log|Λ_N|.
    pub fn first_order_u(&self) -> f64 {
        self.g0 / self.alpha_disc * self.log_card()
    }

    /// Walk-time threshold t_N^Λ(z) = N^d·u_N^Λ(z).
    pub fn t_threshold(&self, z: f64) -> f64 {
        self.u_threshold(z) * (self.n as f64).powi(self.domain.dim() as i32)
    }

    /// Numerical check that ∇φ² does not vanish on the level band
    /// [α_Λ, (1+eps0)·α_Λ] (sampled radially); required by the Gumbel limit.
    pub fn assumption_nondegenerate(&self, r0: f64, eps0: f64) -> bool {
        let hi = (1.0 + eps0) * self.alpha_cont;
        let mut r = r0;
        let mut ok = true;
        let mut seen = 0;
        while r > 1e-3 {
            let p2 = self.reference.phi(r).unwrap().powi(2);
            if p2 >= self.alpha_cont && p2 <= hi {
                seen += 1;
                if self.reference.grad_phi2(r).unwrap().abs() < 1e-12 {
                    ok = false;
                }
            }
            if p2 > hi {
                break;
            }
            r -= 1e-4;
        }
        ok && seen > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Walk,
    Interlacement,
}

/// Unified per-replica coverage data, in cover-level units (walk hit times
/// divided by N^d, so both sources share thresholds u_N^Λ(z)).
pub struct Campaign {
    pub source: Source,
    pub n: i64,
    /// Per replica: cover level 𝔘 (or cover time/N^d); +∞ when the budget ran out.
    pub cover_u: Vec<f64>,
    /// Per replica, per target site: U_x (or hit time/N^d); +∞ when unhit.
    pub site_u: Vec<Vec<f64>>,
}

/// Runs `replicas` interlacement cover-level samples over Λ_N, each stopped
/// at coverage or at level `u_cap`.
pub fn run_interlacement_campaign(
    c: &mut BallCampaign,
    replicas: u64,
    seed: u64,
    u_cap: f64,
    tol: f64,
) -> Result<Campaign, ExperimentError> {
    c.equilibrium(tol)?;
    let eq = c.eq.as_ref().unwrap();
    let results: Vec<(f64, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::rngstream::replica_rng(seed, r);
            match cover_levels(&c.psi, &c.points, eq, u_cap, c.r_out, &mut rng) {
                Ok(lv) => (lv.set_level, lv.levels),
                Err(InterlacementError::LevelCapReached { partial, .. }) => {
                    (f64::INFINITY, partial.levels)
                }
                Err(e) => panic!("unexpected interlacement error: {e}"),
            }
        })
        .collect();
    Ok(Campaign {
        source: Source::Interlacement,
        n: c.n,
        cover_u: results.iter().map(|r| r.0).collect(),
        site_u: results.into_iter().map(|r| r.1).collect(),
    })
}

/// Runs `replicas` confined-walk cover runs from stationary starts, each
/// budgeted at time u_cap·N^d.
pub fn run_walk_campaign(
    c: &BallCampaign,
    replicas: u64,
    seed: u64,
    u_cap: f64,
) -> Result<Campaign, ExperimentError> {
    let nd = (c.n as f64).powi(c.domain.dim() as i32);
    let t_max = (u_cap * nd).ceil() as u64;
    let results: Vec<(f64, Vec<f64>)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let cfg = WalkConfig { start: Start::Stationary, t_max, seed, replica_id: r };
            let res = match run_cover(&c.domain, &c.kernel, &c.eig, &c.target, &cfg) {
                Ok(res) => res,
                Err(WalkError::BudgetExhausted { partial, .. }) => partial,
            };
            let site_u: Vec<f64> = res
                .hit_time
                .iter()
                .map(|h| match h {
                    Some(t) => *t as f64 / nd,
                    None => f64::INFINITY,
                })
                .collect();
            let cover = match res.cover_time {
                Some(t) => t as f64 / nd,
                None => f64::INFINITY,
            };
            (cover, site_u)
        })
        .collect();
    Ok(Campaign {
        source: Source::Walk,
        n: c.n,
        cover_u: results.iter().map(|r| r.0).collect(),
        site_u: results.into_iter().map(|r| r.1).collect(),
    })
}

/// Empirical cover-level CDF against the Gumbel limit exp(−κ_Λ e^{−z}).
#[derive(Debug, Clone, Serialize)]
pub struct GumbelReport {
    pub source: Source,
    pub n: i64,
    pub replica_count: usize,
    pub z_grid: Vec<f64>,
    pub empirical_cdf: Vec<f64>,
    pub theory_cdf: Vec<f64>,
    pub ks_distance: f64,
    /// Empirical CDF on the no-log-log threshold scale, against the
    /// one-sided lower bound exp(−e^{−z}).
    pub super_gumbel_empirical: Vec<f64>,
    pub super_gumbel_bound: Vec<f64>,
    pub super_gumbel_ok: bool,
    /// mean 𝔘 / [g(0)α⁻¹log|Λ_N|] (finite replicas with the budget).
    pub mean_first_order_ratio: f64,
    /// The same ratio with the principal-eigenvalue factor λ_N included in
    /// the reference scale (alternative normalization; λ_N → 1).
    pub mean_first_order_ratio_lambda: f64,
    pub alpha_disc: f64,
    pub alpha_cont: f64,
    pub kappa: f64,
    pub assumption_nondegenerate: bool,
}

pub fn default_z_grid() -> Vec<f64> {
    let mut z = Vec::new();
    let mut v = -2.0f64;
    while v <= 6.0 + 1e-9 {
        z.push(v);
        v += 0.25;
    }
    z
}

pub fn gumbel_report(campaign: &Campaign, c: &BallCampaign, z_grid: &[f64], r0: f64) -> GumbelReport {
    let n_rep = campaign.cover_u.len();
    let frac_below = |thresholds: &dyn Fn(f64) -> f64, z: f64| -> f64 {
        let u = thresholds(z);
        campaign.cover_u.iter().filter(|&&v| v <= u).count() as f64 / n_rep as f64
    };
    let empirical_cdf: Vec<f64> = z_grid
        .iter()
        .map(|&z| frac_below(&|z| c.u_threshold(z), z))
        .collect();
    let theory_cdf: Vec<f64> = z_grid.iter().map(|&z| (-c.kappa * (-z).exp()).exp()).collect();
    let ks_distance = empirical_cdf
        .iter()
        .zip(&theory_cdf)
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    let super_gumbel_empirical: Vec<f64> = z_grid
        .iter()
        .map(|&z| frac_below(&|z| c.u_threshold_no_loglog(z), z))
        .collect();
    let super_gumbel_bound: Vec<f64> = z_grid.iter().map(|&z| (-(-z).exp()).exp()).collect();
    let super_gumbel_ok = super_gumbel_empirical
        .iter()
        .zip(&super_gumbel_bound)
        .all(|(e, b)| *e >= b - 0.05);
    let finite: Vec<f64> = campaign.cover_u.iter().cloned().filter(|v| v.is_finite()).collect();
    let mean_cover = crate::stats::mean(&finite);
    GumbelReport {
        source: campaign.source,
        n: campaign.n,
        replica_count: n_rep,
        z_grid: z_grid.to_vec(),
        empirical_cdf,
        theory_cdf,
        ks_distance,
        super_gumbel_empirical,
        super_gumbel_bound,
        super_gumbel_ok,
        mean_first_order_ratio: mean_cover / c.first_order_u(),
        mean_first_order_ratio_lambda: mean_cover / (c.eig.lambda * c.first_order_u()),
        alpha_disc: c.alpha_disc,
        alpha_cont: c.alpha_cont,
        kappa: c.kappa,
        assumption_nondegenerate: c.assumption_nondegenerate(r0, 0.1),
    }
}

/// Spatial statistics of the late-point set at threshold u_N^Λ(z).
#[derive(Debug, Clone, Serialize)]
pub struct LatePointReport {
    pub source: Source,
    pub n: i64,
    pub z: f64,
    pub threshold: f64,
    pub replica_count: usize,
    pub mean_total_count: f64,
    /// Poisson-limit intensity mass e^{−z}·κ_Λ.
    pub expected_total: f64,
    /// Variance/mean of the per-replica total counts (Poisson ⇒ 1).
    pub dispersion_index: f64,
    pub bins_per_axis: usize,
    /// Total late-point count per cubic bin of x/N ∈ [−r0, r0]³.
    pub bin_counts: Vec<u64>,
    /// Fraction of replicas with an empty bin.
    pub void_probabilities: Vec<f64>,
    /// Late-point fractions in five equal-width radial shells of Λ.
    pub radial_fractions: [f64; 5],
    pub outer_shell_fraction: f64,
}

pub fn late_point_report(
    campaign: &Campaign,
    c: &BallCampaign,
    z: f64,
    r0: f64,
    bins_per_axis: usize,
) -> LatePointReport {
    let u = c.u_threshold(z);
    let n_rep = campaign.site_u.len();
    let nf = c.n as f64;
    let n_bins = bins_per_axis.pow(3);
    let mut bin_counts = vec![0u64; n_bins];
    let mut bin_nonvoid = vec![0u64; n_bins];
    let mut totals = Vec::with_capacity(n_rep);
    let mut shell_counts = [0u64; 5];
    let bin_of = |p: &[i64]| -> usize {
        let mut idx = 0usize;
        for &c in p.iter().take(3) {
            let t = ((c as f64 / nf + r0) / (2.0 * r0) * bins_per_axis as f64).floor();
            let b = (t.max(0.0) as usize).min(bins_per_axis - 1);
            idx = idx * bins_per_axis + b;
        }
        idx
    };
    for site_u in &campaign.site_u {
        let mut seen = vec![false; n_bins];
        let mut total = 0u64;
        for (i, &v) in site_u.iter().enumerate() {
            if v > u {
                total += 1;
                let p = &c.points[i];
                let b = bin_of(p);
                bin_counts[b] += 1;
                seen[b] = true;
                let r = (p.iter().map(|&a| (a * a) as f64).sum::<f64>()).sqrt() / (nf * r0);
                let shell = ((r * 5.0).floor() as usize).min(4);
                shell_counts[shell] += 1;
            }
        }
        totals.push(total as f64);
        for (b, &s) in seen.iter().enumerate() {
            if s {
                bin_nonvoid[b] += 1;
            }
        }
    }
    let mean_total = crate::stats::mean(&totals);
    let total_all: u64 = shell_counts.iter().sum();
    let mut radial_fractions = [0.0f64; 5];
    if total_all > 0 {
        for (i, &s) in shell_counts.iter().enumerate() {
            radial_fractions[i] = s as f64 / total_all as f64;
        }
    }
    LatePointReport {
        source: campaign.source,
        n: campaign.n,
        z,
        threshold: u,
        replica_count: n_rep,
        mean_total_count: mean_total,
        expected_total: (-z).exp() * c.kappa,
        dispersion_index: crate::stats::dispersion_index(&totals),
        bins_per_axis,
        bin_counts,
        void_probabilities: bin_nonvoid
            .iter()
            .map(|&nv| 1.0 - nv as f64 / n_rep as f64)
            .collect(),
        radial_fractions,
        outer_shell_fraction: radial_fractions[4],
    }
}

/// Summary of late-site set statistics at the ρ threshold over an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct RhoReport {
    pub rho: f64,
    pub threshold: f64,
    pub replica_count: usize,
    pub mean_cardinality: f64,
    /// Reference scale κ_Λ/(1−ρ)·|Λ_N|^ρ/log|Λ_N|.
    pub expected_cardinality: f64,
    /// Median over replicas of the min pairwise distance; pairs absent
    /// (fewer than two late sites) count as +∞.
    pub median_min_distance: f64,
    /// Scattering scale a_N^ρ = |Λ_N|^{4ρ/(d−2)}.
    pub scattering_scale: f64,
}

pub fn rho_report(campaign: &Campaign, c: &BallCampaign, rho: f64) -> RhoReport {
    let threshold = (1.0 - rho) * c.g0 / c.alpha_disc * c.log_card();
    let mut cards = Vec::new();
    let mut min_dists = Vec::new();
    for site_u in &campaign.site_u {
        let late: Vec<usize> = site_u
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| if v > threshold { Some(i) } else { None })
            .collect();
        cards.push(late.len() as f64);
        let mut min_d2 = f64::INFINITY;
        for (a, &i) in late.iter().enumerate() {
            for &j in late.iter().skip(a + 1) {
                let d2: f64 = c.points[i]
                    .iter()
                    .zip(&c.points[j])
                    .map(|(&p, &q)| ((p - q) as f64).powi(2))
                    .sum();
                min_d2 = min_d2.min(d2);
            }
        }
        min_dists.push(min_d2.sqrt());
    }
    let d = c.domain.dim() as f64;
    RhoReport {
        rho,
        threshold,
        replica_count: cards.len(),
        mean_cardinality: crate::stats::mean(&cards),
        expected_cardinality: c.kappa / (1.0 - rho) * c.card().powf(rho) / c.log_card(),
        median_min_distance: crate::stats::median(&min_dists),
        scattering_scale: c.card().powf(4.0 * rho / (d - 2.0)),
    }
}

/// One row of the deterministic eigenvector-sum table:
/// (log|Λ_N|/|Λ_N|^{1−β})·Σ_{x∈Λ_N} exp(−β(φ_N²(x)/α)·log|Λ_N|) against κ_Λ/β.
#[derive(Debug, Clone, Serialize)]
pub struct SumRow {
    pub n: i64,
    pub beta: f64,
    pub value: f64,
    pub limit: f64,
    pub relative_gap: f64,
}

pub fn exp_sum_check(campaigns: &[&BallCampaign], beta_list: &[f64]) -> Vec<SumRow> {
    let mut rows = Vec::new();
    for &beta in beta_list {
        for c in campaigns {
            let log_l = c.log_card();
            let card = c.card();
            let sum: f64 = c
                .target
                .sites
                .iter()
                .map(|&i| {
                    let p2 = c.eig.phi[i] * c.eig.phi[i];
                    (-beta * p2 / c.alpha_disc * log_l).exp()
                })
                .sum();
            let value = log_l / card.powf(1.0 - beta) * sum;
            let limit = c.kappa / beta;
            rows.push(SumRow {
                n: c.n,
                beta,
                value,
                limit,
                relative_gap: (value - limit).abs() / limit,
            });
        }
    }
    rows
}

/// Level-band volume table: continuum oracle (additive and multiplicative
/// band forms) plus the lattice count (1/ε)·N^{−d}·#{x ∈ Λ_N : φ_N² ≤ (1+ε)α}.
#[derive(Debug, Clone, Serialize)]
pub struct LevelBandRow {
    pub eps: f64,
    /// ε⁻¹·Vol{α ≤ φ² ≤ α+ε} (continuum; converges to κ_Λ).
    pub continuum_additive: f64,
    /// ε⁻¹·Vol{α ≤ φ² ≤ (1+ε)α} (continuum; converges to α_Λ·κ_Λ).
    pub continuum_multiplicative: f64,
    /// Lattice count on Λ_N with the multiplicative band.
    pub lattice_value: f64,
    pub kappa: f64,
}

pub fn level_band_check(c: &BallCampaign, eps_list: &[f64]) -> Vec<LevelBandRow> {
    let nd = (c.n as f64).powi(c.domain.dim() as i32);
    eps_list
        .iter()
        .map(|&eps| {
            let count = c
                .target
                .sites
                .iter()
                .filter(|&&i| c.eig.phi[i] * c.eig.phi[i] <= (1.0 + eps) * c.alpha_disc)
                .count();
            LevelBandRow {
                eps,
                continuum_additive: c.reference.level_band_kappa(eps * c.alpha_cont),
                continuum_multiplicative: c.reference.level_band_kappa_multiplicative(eps),
                lattice_value: count as f64 / (eps * nd),
                kappa: c.kappa,
            }
        })
        .collect()
}

/// Per-site comparison cap({x})·g(0)/φ_N²(x) over sampled interior target
/// sites (eigenvector–capacity asymptotics).
#[derive(Debug, Clone, Serialize)]
pub struct CapacityRatioReport {
    pub n: i64,
    pub probes: Vec<Vec<i64>>,
    pub ratios: Vec<f64>,
    pub sup_gap: f64,
}

pub fn capacity_ratio_check(
    c: &BallCampaign,
    probe_count: usize,
    box_radius: i64,
    tol: f64,
    seed: u64,
) -> Result<CapacityRatioReport, ExperimentError> {
    use rand::seq::SliceRandom;
    // bulk sites: all target neighbors also in the target
    let bulk: Vec<usize> = (0..c.points.len())
        .filter(|&ti| {
            let site = c.target.sites[ti];
            c.domain.out_degree[site] == 0
                && c.domain
                    .neighbors(site)
                    .iter()
                    .all(|&nb| c.target.in_target[nb as usize])
        })
        .collect();
    let mut rng = crate::rngstream::replica_rng(seed, 0);
    let chosen: Vec<usize> = bulk
        .choose_multiple(&mut rng, probe_count.min(bulk.len()))
        .cloned()
        .collect();
    let results: Vec<(Vec<i64>, f64)> = chosen
        .par_iter()
        .map(|&ti| {
            let x = c.points[ti].clone();
            let solver = BoxSolver::new(&c.psi, &x, box_radius);
            let gs = green_row_on(&solver, &c.psi, &x, tol).expect("green solve");
            let cap = c.psi.weight(&x) / gs.g(&x);
            let phi2 = c.eig.phi[c.target.sites[ti]].powi(2);
            (x, cap * c.g0 / phi2)
        })
        .collect();
    let sup_gap = results
        .iter()
        .map(|(_, r)| (r - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(CapacityRatioReport {
        n: c.n,
        probes: results.iter().map(|(x, _)| x.clone()).collect(),
        ratios: results.into_iter().map(|(_, r)| r).collect(),
        sup_gap,
    })
}

/// Walk-vs-interlacement vacancy sandwich at matched scales.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub n: i64,
    pub t_n: f64,
    pub u_n: f64,
    pub epsilon_n: f64,
    pub probe_sites: Vec<Vec<i64>>,
    pub walk_freq: Vec<f64>,
    pub inter_minus_freq: Vec<f64>,
    pub inter_plus_freq: Vec<f64>,
    pub satisfied: Vec<bool>,
    pub fraction_ok: f64,
    /// Mean vacancy at (1−ε)u ≥ mean at (1+ε)u (monotonicity sanity).
    pub monotone_ok: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn coupling_check(
    c: &mut BallCampaign,
    t_mult: f64,
    delta: f64,
    probe_count: usize,
    walk_replicas: u64,
    inter_replicas: u64,
    seed: u64,
    tol: f64,
) -> Result<CouplingReport, ExperimentError> {
    use rand::seq::SliceRandom;
    let nd = (c.n as f64).powi(c.domain.dim() as i32);
    let u_n = t_mult * c.g0 / c.alpha_disc * c.log_card();
    let t_n = u_n * nd;
    assert!(t_n >= (c.n as f64).powf(2.5), "walk horizon too short for the coupling regime");
    let epsilon_n = (c.n as f64).powf(-delta / 4.0);
    let u_minus = (1.0 - epsilon_n) * u_n;
    let u_plus = (1.0 + epsilon_n) * u_n;

    let mut rng = crate::rngstream::replica_rng(seed, u64::MAX);
    let all: Vec<usize> = (0..c.points.len()).collect();
    let probes: Vec<usize> = all
        .choose_multiple(&mut rng, probe_count.min(c.points.len()))
        .cloned()
        .collect();

    // walk campaign: vacancy of each probe at time t_n
    let t_max = t_n.ceil() as u64;
    let walk_vac: Vec<Vec<bool>> = (0..walk_replicas)
        .into_par_iter()
        .map(|r| {
            let cfg = WalkConfig { start: Start::Stationary, t_max, seed, replica_id: r };
            let res = match run_cover(&c.domain, &c.kernel, &c.eig, &c.target, &cfg) {
                Ok(res) => res,
                Err(WalkError::BudgetExhausted { partial, .. }) => partial,
            };
            probes
                .iter()
                .map(|&ti| match res.hit_time[ti] {
                    Some(t) => t as f64 > t_n,
                    None => true,
                })
                .collect()
        })
        .collect();

    // interlacement campaigns at the two sandwich levels
    c.equilibrium(tol)?;
    let eq = c.eq.as_ref().unwrap();
    let inter_vac = |level: f64, salt: u64| -> Vec<Vec<bool>> {
        (0..inter_replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(seed ^ salt, r);
                let s = sample_trace(&c.psi, &c.points, level, eq, c.r_out, &mut rng);
                let mut covered = vec![false; c.points.len()];
                for &i in &s.trace {
                    covered[i] = true;
                }
                probes.iter().map(|&ti| !covered[ti]).collect()
            })
            .collect()
    };
    let vac_minus = inter_vac(u_minus, 0x6d696e);
    let vac_plus = inter_vac(u_plus, 0x706c75);

    let freq = |rows: &[Vec<bool>], j: usize| -> (f64, f64) {
        let n = rows.len() as f64;
        let p = rows.iter().filter(|r| r[j]).count() as f64 / n;
        (p, (p * (1.0 - p) / n).sqrt())
    };
    let mut walk_freq = Vec::new();
    let mut minus_freq = Vec::new();
    let mut plus_freq = Vec::new();
    let mut satisfied = Vec::new();
    for j in 0..probes.len() {
        let (fw, sw) = freq(&walk_vac, j);
        let (fm, sm) = freq(&vac_minus, j);
        let (fp, sp) = freq(&vac_plus, j);
        // sandwich: vacancy at (1+ε)u ≤ walk vacancy ≤ vacancy at (1−ε)u
        let lo_ok = fw >= fp - 3.0 * (sw * sw + sp * sp).sqrt();
        let hi_ok = fw <= fm + 3.0 * (sw * sw + sm * sm).sqrt();
        satisfied.push(lo_ok && hi_ok);
        walk_freq.push(fw);
        minus_freq.push(fm);
        plus_freq.push(fp);
    }
    let fraction_ok = satisfied.iter().filter(|&&s| s).count() as f64 / satisfied.len() as f64;
    let monotone_ok =
        crate::stats::mean(&minus_freq) >= crate::stats::mean(&plus_freq) - 1e-12;
    Ok(CouplingReport {
        n: c.n,
        t_n,
        u_n,
        epsilon_n,
        probe_sites: probes.iter().map(|&ti| c.points[ti].clone()).collect(),
        walk_freq,
        inter_minus_freq: minus_freq,
        inter_plus_freq: plus_freq,
        satisfied,
        fraction_ok,
        monotone_ok,
    })
}

/// Empirical vacancy-indicator covariances of an interlacement ensemble
/// against the theoretical bounds; also the variance/mean of the late-set
/// cardinality (f ≡ 1 case of the variance formula).
#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub u: f64,
    pub pair_count: usize,
    /// Largest empirical covariance over sampled pairs.
    pub max_covariance: f64,
    /// Universal joint-vacancy bound exp(−u·α/g(0)) (the c₀ = 0 form).
    pub universal_bound: f64,
    /// Smallest c fitted so every far pair satisfies the distance bound
    /// cov ≤ 2exp(−u(φ²(x)+φ²(y))/g(0))·[exp(c·u/|x−y|^{d−2}) − 1] + 3σ.
    pub fitted_c_d: f64,
    pub var_total: f64,
    pub mean_total: f64,
    pub var_over_mean: f64,
}

pub fn variance_formula_check(
    campaign: &Campaign,
    c: &BallCampaign,
    u: f64,
    pair_count: usize,
    seed: u64,
) -> Result<VarianceReport, ExperimentError> {
    use rand::seq::SliceRandom;
    let n_rep = campaign.site_u.len();
    assert!(n_rep >= 200, "need at least 200 replicas for covariance estimates");
    let vacant: Vec<Vec<bool>> = campaign
        .site_u
        .iter()
        .map(|su| su.iter().map(|&v| v > u).collect())
        .collect();
    let mut rng = crate::rngstream::replica_rng(seed, 1);
    let idx: Vec<usize> = (0..c.points.len()).collect();
    let mut max_cov = f64::NEG_INFINITY;
    let mut fitted_c_d = 0.0f64;
    let universal_bound = (-u * c.alpha_disc / c.g0).exp();
    let d = c.domain.dim();
    let mut checked = 0usize;
    while checked < pair_count {
        let pair: Vec<usize> = idx.choose_multiple(&mut rng, 2).cloned().collect();
        let (i, j) = (pair[0], pair[1]);
        if i == j {
            continue;
        }
        checked += 1;
        let n = n_rep as f64;
        let pi = vacant.iter().filter(|v| v[i]).count() as f64 / n;
        let pj = vacant.iter().filter(|v| v[j]).count() as f64 / n;
        let pij = vacant.iter().filter(|v| v[i] && v[j]).count() as f64 / n;
        let cov = pij - pi * pj;
        let se = (pij * (1.0 - pij) / n).sqrt()
            + (pi * pj * ((1.0 - pi) / n + (1.0 - pj) / n)).sqrt();
        max_cov = max_cov.max(cov);
        if cov > universal_bound + 3.0 * se {
            return Err(ExperimentError::BoundViolated(format!(
                "pair ({i},{j}): covariance {cov:.4} exceeds universal bound {universal_bound:.4}"
            )));
        }
        // distance-form bound: fit the smallest constant making it hold
        let dist2: f64 = c.points[i]
            .iter()
            .zip(&c.points[j])
            .map(|(&p, &q)| ((p - q) as f64).powi(2))
            .sum();
        let dist = dist2.sqrt();
        let phi2i = c.eig.phi[c.target.sites[i]].powi(2);
        let phi2j = c.eig.phi[c.target.sites[j]].powi(2);
        let prefac = 2.0 * (-u * (phi2i + phi2j) / c.g0).exp();
        let excess = (cov - 3.0 * se).max(0.0);
        if excess > 0.0 && prefac > 0.0 {
            // invert cov = prefac·[exp(c·u/r^{d−2}) − 1] for c
            let needed = (excess / prefac + 1.0).ln() * dist.powi(d as i32 - 2) / u;
            fitted_c_d = fitted_c_d.max(needed);
        }
    }
    let totals: Vec<f64> = vacant
        .iter()
        .map(|v| v.iter().filter(|&&b| b).count() as f64)
        .collect();
    let mean_total = crate::stats::mean(&totals);
    let var_total = crate::stats::variance(&totals);
    Ok(VarianceReport {
        u,
        pair_count: checked,
        max_covariance: max_cov,
        universal_bound,
        fitted_c_d,
        var_total,
        mean_total,
        var_over_mean: if mean_total > 0.0 { var_total / mean_total } else { 0.0 },
    })
}
