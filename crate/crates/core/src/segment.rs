//! One-dimensional confined walk on the segment ⟦−N, N⟧ and its covering by
//! endpoint excursions.
//!
//! The segment is a path graph with 2N+1 sites, whose principal eigenpair is
//! closed-form: φ(k) = cos(πk/(2N+2)), λ = cos(π/(2N+2)). Starting from 0,
//! the walk is decomposed into endpoint excursions: τ_i is the first time
//! |S_t| = N after the previous return to 0, ε_i = sign(S_{τ_i}), and τ⁰_i
//! the next return to 0. The cover time of the segment is τ_𝓘 where 𝓘 is the
//! first excursion index whose sign differs from ε₁ (both endpoints are then
//! visited, hence by path-connectedness every site is). The count 𝓘 − 1 is
//! expected to be geometric(1/2) and the cover time to scale like N³.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Closed-form principal eigenpair of the path ⟦−N, N⟧ with absorption at ±(N+1).
pub fn segment_eigenpair(n: i64) -> (f64, Vec<f64>) {
    let m = 2 * n + 2;
    let lambda = (std::f64::consts::PI / m as f64).cos();
    let phi = (-n..=n)
        .map(|k| (std::f64::consts::PI * k as f64 / m as f64).cos())
        .collect();
    (lambda, phi)
}

/// Per-replica outcome of a segment cover run.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentOutcome {
    pub replica: u64,
    pub cover_time: u64,
    /// cover_time / N³.
    pub ratio_n3: f64,
    /// The stopping excursion index 𝓘 (first sign change).
    pub excursions: u64,
    /// Durations τ_i − τ⁰_{i−1} of the endpoint excursions, i = 1..𝓘.
    pub excursion_durations: Vec<u64>,
}

/// Runs one replica: confined walk from 0 until the first excursion whose
/// endpoint sign differs from the first one.
pub fn run_segment_replica(n: i64, seed: u64, replica_id: u64) -> SegmentOutcome {
    assert!(n >= 2);
    let (_, phi) = segment_eigenpair(n);
    let off = n; // site k stored at index k + N
    // probability of stepping right at interior site k: φ(k+1)/(φ(k−1)+φ(k+1));
    // at the endpoints the only interior neighbor is toward the center
    let p_right: Vec<f64> = (-n..=n)
        .map(|k| {
            if k == -n {
                1.0
            } else if k == n {
                0.0
            } else {
                let r = phi[(k + 1 + off) as usize];
                let l = phi[(k - 1 + off) as usize];
                r / (l + r)
            }
        })
        .collect();

    let mut rng = crate::rngstream::replica_rng(seed, replica_id);
    let mut s: i64 = 0;
    let mut t: u64 = 0;
    let mut excursion_durations = Vec::new();
    let mut first_sign: i64 = 0;
    let mut excursions: u64 = 0;
    let (cover_time, _) = loop {
        // run to |s| = N, timing the excursion from the start at 0
        let t_start = t;
        while s.abs() != n {
            let u: f64 = rng.gen();
            s += if u < p_right[(s + off) as usize] { 1 } else { -1 };
            t += 1;
        }
        excursions += 1;
        excursion_durations.push(t - t_start);
        let sign = s.signum();
        if first_sign == 0 {
            first_sign = sign;
        } else if sign != first_sign {
            break (t, sign);
        }
        // return to 0 before the next excursion
        while s != 0 {
            let u: f64 = rng.gen();
            s += if u < p_right[(s + off) as usize] { 1 } else { -1 };
            t += 1;
        }
    };

    SegmentOutcome {
        replica: replica_id,
        cover_time,
        ratio_n3: cover_time as f64 / (n as f64).powi(3),
        excursions,
        excursion_durations,
    }
}

/// Independent replicas, merged in replica order (thread-count independent).
pub fn segment_cover(n: i64, replicas: u64, seed: u64) -> Vec<SegmentOutcome> {
    (0..replicas)
        .into_par_iter()
        .map(|r| run_segment_replica(n, seed, r))
        .collect()
}
