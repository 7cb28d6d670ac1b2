//! Tilted random interlacements restricted to a finite set K ⊂ Z^d.
//!
//! The trace of the interlacement set at level u on K has the same law as the
//! union of ranges of N ~ Poisson(u·cap(K)) independent tilted walks started
//! from the normalized equilibrium measure ē_K and run until they leave a
//! large kill radius. Per-site cover levels U_x arise by running trajectories
//! at the arrival levels of a unit-rate Poisson process rescaled by
//! 1/cap(K); the set cover level is max_x U_x. The vacancy law is
//! P(x ∉ trace at level u) = exp(−u·cap({x})).

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::lattice::pack_point;
use crate::potential::{EquilibriumMeasure, TiltField};

#[derive(Debug, Error)]
pub enum InterlacementError {
    #[error("level cap {u_cap} reached with {uncovered} sites uncovered")]
    LevelCapReached { u_cap: f64, uncovered: usize, partial: CoverLevels },
    #[error("cover levels only complete up to {reached}, but {required} is needed")]
    LevelsIncomplete { required: f64, reached: f64 },
}

/// Trace of one interlacement sample on K.
#[derive(Debug, Clone)]
pub struct InterlacementSample {
    pub u: f64,
    /// Sorted indices into K of the sites covered by the trace.
    pub trace: Vec<usize>,
    pub trajectory_count: usize,
    /// Sorted Poisson arrival levels in [0, u], one per trajectory.
    pub arrival_levels: Vec<f64>,
    /// Entrance site (index into K) of each trajectory.
    pub first_hits: Vec<usize>,
}

/// Per-site cover levels of K and the set cover level.
#[derive(Debug, Clone)]
pub struct CoverLevels {
    /// U_x per K point; +∞ where the run stopped before coverage.
    pub levels: Vec<f64>,
    /// max_x U_x (the level at which K became covered); +∞ if incomplete.
    pub set_level: f64,
    pub complete: bool,
    /// Highest arrival level processed.
    pub reached: f64,
    pub trajectory_count: usize,
}

/// Summary of the late-site set {x : U_x > u_threshold}.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RhoSummary {
    pub rho: f64,
    pub threshold: f64,
    /// Indices into K of the late sites.
    pub indices: Vec<usize>,
    pub cardinality: usize,
    /// Euclidean min pairwise distance; `None` when fewer than two sites
    /// remain (no pair exists — treated as +∞ by aggregations).
    pub min_pairwise_distance: Option<f64>,
}

fn centroid(k: &[Vec<i64>]) -> Vec<f64> {
    let d = k[0].len();
    let mut c = vec![0.0f64; d];
    for p in k {
        for a in 0..d {
            c[a] += p[a] as f64;
        }
    }
    for v in c.iter_mut() {
        *v /= k.len() as f64;
    }
    c
}

fn index_map(k: &[Vec<i64>]) -> HashMap<u128, usize> {
    k.iter().enumerate().map(|(i, p)| (pack_point(p), i)).collect()
}

/// Cumulative entrance law for inverse-CDF sampling.
fn entrance_cum(eq: &EquilibriumMeasure) -> Vec<f64> {
    let mut cum = Vec::with_capacity(eq.weights.len());
    let mut acc = 0.0;
    for w in &eq.weights {
        acc += w / eq.capacity;
        cum.push(acc);
    }
    if let Some(last) = cum.last_mut() {
        *last = 1.0;
    }
    cum
}

fn sample_entrance<R: Rng>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    cum.partition_point(|&c| c < u).min(cum.len() - 1)
}

/// Runs one tilted trajectory from K-point `start` until it leaves the kill
/// radius, invoking `visit` with the K-index of every K site it touches.
fn run_trajectory<R: Rng>(
    psi: &TiltField,
    k: &[Vec<i64>],
    kmap: &HashMap<u128, usize>,
    center: &[f64],
    r_out: f64,
    start: usize,
    rng: &mut R,
    mut visit: impl FnMut(usize),
) {
    let d = psi.dim;
    let r2_out = r_out * r_out;
    let mut p = k[start].clone();
    visit(start);
    loop {
        psi.step_in_place(&mut p, rng);
        if let Some(&i) = kmap.get(&pack_point(&p)) {
            visit(i);
        }
        let r2: f64 = p
            .iter()
            .zip(center)
            .take(d)
            .map(|(&a, &c)| (a as f64 - c) * (a as f64 - c))
            .sum();
        if r2 > r2_out {
            return;
        }
    }
}

/// Samples the interlacement trace 𝓘(u) ∩ K: Poisson(u·cap(K)) trajectories
/// from ē_K, each run by tilted steps until past `r_out` from the centroid.
pub fn sample_trace<R: Rng>(
    psi: &TiltField,
    k: &[Vec<i64>],
    u: f64,
    eq: &EquilibriumMeasure,
    r_out: f64,
    rng: &mut R,
) -> InterlacementSample {
    assert!(u >= 0.0);
    assert_eq!(k.len(), eq.weights.len());
    let mean = u * eq.capacity;
    let trajectory_count = if mean == 0.0 {
        0
    } else {
        Poisson::new(mean).unwrap().sample(rng) as usize
    };
    let mut arrival_levels: Vec<f64> = (0..trajectory_count).map(|_| rng.gen::<f64>() * u).collect();
    arrival_levels.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let cum = entrance_cum(eq);
    let kmap = index_map(k);
    let center = centroid(k);
    let mut covered = vec![false; k.len()];
    let mut first_hits = Vec::with_capacity(trajectory_count);
    for _ in 0..trajectory_count {
        let start = sample_entrance(&cum, rng);
        first_hits.push(start);
        run_trajectory(psi, k, &kmap, &center, r_out, start, rng, |i| covered[i] = true);
    }
    let trace: Vec<usize> = covered
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| if c { Some(i) } else { None })
        .collect();
    InterlacementSample { u, trace, trajectory_count, arrival_levels, first_hits }
}

/// Per-site cover levels: trajectories arrive at the jump levels of a
/// unit-rate Poisson process scaled by 1/cap(K); U_x is the arrival level of
/// the first trajectory visiting x. Stops at full coverage or at `u_cap`.
pub fn cover_levels<R: Rng>(
    psi: &TiltField,
    k: &[Vec<i64>],
    eq: &EquilibriumMeasure,
    u_cap: f64,
    r_out: f64,
    rng: &mut R,
) -> Result<CoverLevels, InterlacementError> {
    assert_eq!(k.len(), eq.weights.len());
    let cum = entrance_cum(eq);
    let kmap = index_map(k);
    let center = centroid(k);
    let mut levels = vec![f64::INFINITY; k.len()];
    let mut uncovered = k.len();
    let mut level = 0.0f64;
    let mut trajectory_count = 0usize;
    loop {
        // next Poisson arrival: exponential gap with rate cap(K)
        let gap = -(1.0 - rng.gen::<f64>()).ln() / eq.capacity;
        let next = level + gap;
        if next > u_cap {
            let partial = CoverLevels {
                levels,
                set_level: f64::INFINITY,
                complete: false,
                reached: u_cap,
                trajectory_count,
            };
            return Err(InterlacementError::LevelCapReached {
                u_cap,
                uncovered,
                partial,
            });
        }
        level = next;
        trajectory_count += 1;
        let start = sample_entrance(&cum, rng);
        run_trajectory(psi, k, &kmap, &center, r_out, start, rng, |i| {
            if levels[i].is_infinite() {
                levels[i] = level;
                uncovered -= 1;
            }
        });
        if uncovered == 0 {
            return Ok(CoverLevels {
                set_level: level,
                levels,
                complete: true,
                reached: level,
                trajectory_count,
            });
        }
    }
}

/// Late-site set {x ∈ K : U_x > (1−ρ)·(g(0)/α)·log|K|} with cardinality and
/// minimum pairwise distance.
pub fn rho_set(
    levels: &CoverLevels,
    rho: f64,
    g0_over_alpha: f64,
    k: &[Vec<i64>],
) -> Result<RhoSummary, InterlacementError> {
    assert!(rho > 0.0 && rho < 1.0);
    let threshold = (1.0 - rho) * g0_over_alpha * (k.len() as f64).ln();
    if !levels.complete && levels.reached < threshold {
        return Err(InterlacementError::LevelsIncomplete {
            required: threshold,
            reached: levels.reached,
        });
    }
    let indices: Vec<usize> = levels
        .levels
        .iter()
        .enumerate()
        .filter_map(|(i, &u)| if u > threshold { Some(i) } else { None })
        .collect();
    let mut min_d2 = f64::INFINITY;
    for (a, &i) in indices.iter().enumerate() {
        for &j in indices.iter().skip(a + 1) {
            let d2: f64 = k[i]
                .iter()
                .zip(&k[j])
                .map(|(&p, &q)| ((p - q) as f64).powi(2))
                .sum();
            if d2 < min_d2 {
                min_d2 = d2;
            }
        }
    }
    Ok(RhoSummary {
        rho,
        threshold,
        cardinality: indices.len(),
        min_pairwise_distance: if indices.len() < 2 { None } else { Some(min_d2.sqrt()) },
        indices,
    })
}

/// Coordinates of the inner-target sites, in K-index order, for use with the
/// samplers above.
pub fn target_points(
    domain: &crate::domain::Domain,
    target: &crate::domain::TargetSet,
) -> Vec<Vec<i64>> {
    target.sites.iter().map(|&i| domain.sites[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{equilibrium_measure, EqMethod};
    use rayon::prelude::*;

    fn uniform_eq(k: &[Vec<i64>], radius: i64) -> EquilibriumMeasure {
        let psi = TiltField::uniform(3);
        equilibrium_measure(&psi, k, EqMethod::LinearSolve, radius, 0.0, 1e-10).unwrap()
    }

    #[test]
    fn zero_level_trace_is_empty() {
        let psi = TiltField::uniform(3);
        let k = vec![vec![0i64, 0, 0]];
        let eq = uniform_eq(&k, 20);
        let mut rng = crate::rngstream::replica_rng(1, 0);
        let s = sample_trace(&psi, &k, 0.0, &eq, 30.0, &mut rng);
        assert_eq!(s.trajectory_count, 0);
        assert!(s.trace.is_empty());
        assert!(s.arrival_levels.is_empty());
    }

    #[test]
    fn singleton_vacancy_matches_exponential_law() {
        let psi = TiltField::uniform(3);
        let k = vec![vec![0i64, 0, 0]];
        let eq = uniform_eq(&k, 24);
        let cap = eq.capacity;
        for (ui, u_mult) in [0.5f64, 1.0, 2.0].into_iter().enumerate() {
            let u = u_mult / cap;
            let samples = 10_000usize;
            let vacant: usize = (0..samples)
                .into_par_iter()
                .map(|r| {
                    let mut rng = crate::rngstream::replica_rng(100 + ui as u64, r as u64);
                    let s = sample_trace(&psi, &k, u, &eq, 30.0, &mut rng);
                    usize::from(s.trace.is_empty())
                })
                .sum();
            let want = (-u * cap).exp();
            let se = (want * (1.0 - want) / samples as f64).sqrt();
            let emp = vacant as f64 / samples as f64;
            assert!(
                (emp - want).abs() < 3.0 * se + 0.004,
                "u·cap = {}: {} vs {}",
                u_mult,
                emp,
                want
            );
        }
    }

    #[test]
    fn far_pair_vacancy_factorizes() {
        let psi = TiltField::uniform(3);
        let k = vec![vec![0i64, 0, 0], vec![20, 0, 0]];
        let eq = uniform_eq(&k, 40);
        let u = 1.0 / eq.capacity;
        let samples = 20_000usize;
        let counts: Vec<(u32, u32, u32)> = (0..samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(7, r as u64);
                let s = sample_trace(&psi, &k, u, &eq, 60.0, &mut rng);
                let v0 = !s.trace.contains(&0);
                let v1 = !s.trace.contains(&1);
                (u32::from(v0), u32::from(v1), u32::from(v0 && v1))
            })
            .collect();
        let n = samples as f64;
        let p0 = counts.iter().map(|c| c.0).sum::<u32>() as f64 / n;
        let p1 = counts.iter().map(|c| c.1).sum::<u32>() as f64 / n;
        let pj = counts.iter().map(|c| c.2).sum::<u32>() as f64 / n;
        let se = (pj * (1.0 - pj) / n).sqrt() + (p0 * p1 * ((1.0 - p0) / n + (1.0 - p1) / n)).sqrt();
        assert!((pj - p0 * p1).abs() < 3.0 * se + 0.005, "{} vs {}", pj, p0 * p1);
    }

    #[test]
    fn poisson_additivity_of_traces() {
        // union of independent traces at u1 and u2 has the same per-site
        // vacancy frequencies as one trace at u1+u2
        let psi = TiltField::uniform(3);
        let mut k = Vec::new();
        for x in 0..2i64 {
            for y in 0..2i64 {
                for z in 0..2i64 {
                    k.push(vec![x, y, z]);
                }
            }
        }
        let eq = uniform_eq(&k, 24);
        let (u1, u2) = (0.4 / eq.capacity, 0.8 / eq.capacity);
        let samples = 8_000usize;
        let vac_union: Vec<u32> = (0..samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(21, r as u64);
                let a = sample_trace(&psi, &k, u1, &eq, 30.0, &mut rng);
                let b = sample_trace(&psi, &k, u2, &eq, 30.0, &mut rng);
                let mut vac = 0u32;
                for i in 0..k.len() {
                    if !a.trace.contains(&i) && !b.trace.contains(&i) {
                        vac |= 1 << i;
                    }
                }
                vac
            })
            .collect();
        let vac_single: Vec<u32> = (0..samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(22, r as u64);
                let s = sample_trace(&psi, &k, u1 + u2, &eq, 30.0, &mut rng);
                let mut vac = 0u32;
                for i in 0..k.len() {
                    if !s.trace.contains(&i) {
                        vac |= 1 << i;
                    }
                }
                vac
            })
            .collect();
        for i in 0..k.len() {
            let a = vac_union.iter().filter(|&&v| v >> i & 1 == 1).count() as f64 / samples as f64;
            let b = vac_single.iter().filter(|&&v| v >> i & 1 == 1).count() as f64 / samples as f64;
            let se = ((a * (1.0 - a) + b * (1.0 - b)) / samples as f64).sqrt();
            assert!((a - b).abs() < 3.5 * se + 0.005, "site {}: {} vs {}", i, a, b);
        }
    }

    #[test]
    fn far_start_hitting_distribution_matches_entrance_law() {
        // the first-hit distribution of walks launched far away, conditioned
        // on hitting K, approaches the normalized equilibrium measure
        let psi = TiltField::uniform(3);
        let k: Vec<Vec<i64>> = vec![
            vec![0, 0, 0],
            vec![1, 0, 0],
            vec![0, 1, 0],
            vec![0, 0, 1],
            vec![1, 1, 0],
        ];
        let eq = uniform_eq(&k, 30);
        let kmap = index_map(&k);
        let walks = 60_000usize;
        let r_start = 15.0f64;
        let r_kill2 = 60.0f64 * 60.0;
        let hits: Vec<Option<usize>> = (0..walks)
            .into_par_iter()
            .map(|w| {
                let mut rng = crate::rngstream::replica_rng(33, w as u64);
                // random direction, rounded onto the lattice
                let dir: [f64; 3] = loop {
                    let v = [
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                    ];
                    let n2 = v.iter().map(|x| x * x).sum::<f64>();
                    if n2 > 1e-4 && n2 <= 1.0 {
                        let n = n2.sqrt();
                        break [v[0] / n, v[1] / n, v[2] / n];
                    }
                };
                let mut p = vec![
                    (dir[0] * r_start).round() as i64,
                    (dir[1] * r_start).round() as i64,
                    (dir[2] * r_start).round() as i64,
                ];
                loop {
                    psi.step_in_place(&mut p, &mut rng);
                    if let Some(&i) = kmap.get(&pack_point(&p)) {
                        return Some(i);
                    }
                    let r2: f64 = p.iter().map(|&a| (a * a) as f64).sum();
                    if r2 > r_kill2 {
                        return None;
                    }
                }
            })
            .collect();
        let mut observed = vec![0.0f64; k.len()];
        let mut total = 0.0;
        for h in hits.into_iter().flatten() {
            observed[h] += 1.0;
            total += 1.0;
        }
        assert!(total > 1000.0, "too few hits: {}", total);
        let expected: Vec<f64> = eq.normalized().iter().map(|w| w * total).collect();
        let (_, p_val) = crate::stats::chi_square_test(&observed, &expected, 0);
        assert!(p_val > 0.01, "chi-square p = {}", p_val);
    }

    #[test]
    fn singleton_cover_level_is_exponential() {
        let psi = TiltField::uniform(3);
        let k = vec![vec![0i64, 0, 0]];
        let eq = uniform_eq(&k, 24);
        let cap = eq.capacity;
        let samples = 10_000usize;
        let levels: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(5, r as u64);
                cover_levels(&psi, &k, &eq, f64::INFINITY, 30.0, &mut rng)
                    .unwrap()
                    .set_level
            })
            .collect();
        let d = crate::stats::ks_statistic(&levels, |u| 1.0 - (-cap * u).exp());
        let p = crate::stats::ks_p_value(d, samples);
        assert!(p > 0.01, "KS p = {} (d = {})", p, d);
    }

    #[test]
    fn trace_nesting_in_level() {
        let psi = TiltField::uniform(3);
        let k: Vec<Vec<i64>> = (0..3i64)
            .flat_map(|x| (0..3i64).map(move |y| vec![x, y, 0]))
            .collect();
        let eq = uniform_eq(&k, 24);
        let mut rng = crate::rngstream::replica_rng(11, 0);
        let lv = cover_levels(&psi, &k, &eq, f64::INFINITY, 30.0, &mut rng).unwrap();
        assert!(lv.complete);
        let at = |u: f64| -> Vec<usize> {
            lv.levels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| if l <= u { Some(i) } else { None })
                .collect()
        };
        let u_mid = lv.set_level / 2.0;
        let small = at(u_mid);
        let big = at(lv.set_level);
        assert!(small.iter().all(|i| big.contains(i)));
        assert_eq!(big.len(), k.len());
        assert_eq!(
            lv.set_level,
            lv.levels.iter().cloned().fold(f64::MIN, f64::max)
        );
    }

    #[test]
    fn level_cap_yields_partial_levels() {
        let psi = TiltField::uniform(3);
        let k: Vec<Vec<i64>> = (0..4i64).map(|x| vec![x * 3, 0, 0]).collect();
        let eq = uniform_eq(&k, 24);
        let mut rng = crate::rngstream::replica_rng(13, 0);
        let tiny = 1e-6 / eq.capacity;
        match cover_levels(&psi, &k, &eq, tiny, 30.0, &mut rng) {
            Err(InterlacementError::LevelCapReached { uncovered, partial, .. }) => {
                assert!(uncovered > 0);
                assert!(!partial.complete);
                assert_eq!(partial.levels.len(), k.len());
            }
            other => panic!("expected LevelCapReached, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn rho_set_threshold_and_distances() {
        let mut levels = CoverLevels {
            levels: vec![0.5, 3.0, 10.0, 12.0],
            set_level: 12.0,
            complete: true,
            reached: 12.0,
            trajectory_count: 4,
        };
        let k: Vec<Vec<i64>> = vec![vec![0, 0, 0], vec![1, 0, 0], vec![5, 0, 0], vec![5, 4, 0]];
        // threshold = (1−ρ)·q·ln 4 with q chosen so the threshold is 5
        let q = 5.0 / (0.5 * (4.0f64).ln());
        let s = rho_set(&levels, 0.5, q, &k).unwrap();
        assert!((s.threshold - 5.0).abs() < 1e-12);
        assert_eq!(s.indices, vec![2, 3]);
        assert_eq!(s.cardinality, 2);
        assert!((s.min_pairwise_distance.unwrap() - 4.0).abs() < 1e-12);
        // a single late site has no pairwise distance
        levels.levels = vec![0.5, 3.0, 10.0, 4.0];
        let s1 = rho_set(&levels, 0.5, q, &k).unwrap();
        assert_eq!(s1.cardinality, 1);
        assert!(s1.min_pairwise_distance.is_none());
        // incomplete runs below the threshold are rejected
        levels.complete = false;
        levels.reached = 2.0;
        assert!(matches!(
            rho_set(&levels, 0.5, q, &k),
            Err(InterlacementError::LevelsIncomplete { .. })
        ));
    }

    #[test]
    fn vacancy_count_matches_capacity_estimator() {
        // E[#vacant sites] = Σ_x exp(−u·cap({x})) exactly, per-site vacancy law
        let psi = TiltField::uniform(3);
        let k: Vec<Vec<i64>> = vec![
            vec![0, 0, 0],
            vec![4, 0, 0],
            vec![0, 5, 0],
            vec![0, 0, 6],
            vec![-4, -2, 0],
            vec![3, 3, 3],
            vec![-5, 4, 1],
            vec![2, -4, -3],
        ];
        let eq = uniform_eq(&k, 30);
        let u = 0.3 / eq.weights[0]; // order-one vacancy probabilities
        let predicted: f64 = k
            .iter()
            .map(|x| {
                let cap_x = crate::potential::point_capacity(&psi, x, 30, 1e-10).unwrap();
                (-u * cap_x).exp()
            })
            .sum();
        let samples = 4_000usize;
        let counts: Vec<f64> = (0..samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = crate::rngstream::replica_rng(77, r as u64);
                let s = sample_trace(&psi, &k, u, &eq, 45.0, &mut rng);
                (k.len() - s.trace.len()) as f64
            })
            .collect();
        let mean = crate::stats::mean(&counts);
        let se = crate::stats::std_err(&counts);
        assert!(
            (mean - predicted).abs() < 3.0 * se + 0.03,
            "{} vs {} (se {})",
            mean,
            predicted,
            se
        );
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let psi = TiltField::uniform(3);
        let k: Vec<Vec<i64>> = (0..3i64).map(|x| vec![x, 0, 0]).collect();
        let eq = uniform_eq(&k, 20);
        let mut r1 = crate::rngstream::replica_rng(9, 4);
        let mut r2 = crate::rngstream::replica_rng(9, 4);
        let a = sample_trace(&psi, &k, 0.8, &eq, 25.0, &mut r1);
        let b = sample_trace(&psi, &k, 0.8, &eq, 25.0, &mut r2);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trajectory_count, b.trajectory_count);
        assert_eq!(a.first_hits, b.first_hits);
    }
}
