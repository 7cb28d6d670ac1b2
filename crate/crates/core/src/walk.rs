//! Confined-walk simulation: stationary starts, cover times of targets, and
//! late-point extraction.

use rand::Rng;
use thiserror::Error;

use crate::domain::{Domain, TargetSet};
use crate::spectral::{ConfinedKernel, EigenPair};

#[derive(Debug, Error)]
pub enum WalkError {
    #[error("step budget {t_max} exhausted with {unhit} target sites unhit")]
    BudgetExhausted {
        t_max: u64,
        unhit: usize,
        partial: CoverResult,
    },
}

/// Where a replica starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Start {
    /// Fixed site, for identity tests.
    Site(usize),
    /// Fresh draw from the invariant measure φ_N²/Σφ_N².
    Stationary,
}

#[derive(Debug, Clone)]
pub struct WalkConfig {
    pub start: Start,
    /// Step budget.
    pub t_max: u64,
    pub seed: u64,
    pub replica_id: u64,
}

/// First-hit times of the target sites and the induced cover time.
#[derive(Debug, Clone)]
pub struct CoverResult {
    /// Indexed like `TargetSet::sites`; `None` = never hit within budget.
    pub hit_time: Vec<Option<u64>>,
    /// Max of the hit times once every target site is hit.
    pub cover_time: Option<u64>,
    pub trajectory_length: u64,
    /// The realized start site.
    pub start_site: usize,
}

/// Cumulative-weight sampler for the invariant measure φ_N².
#[derive(Debug, Clone)]
pub struct StationarySampler {
    cum: Vec<f64>,
}

impl StationarySampler {
    pub fn new(eig: &EigenPair) -> Self {
        let mut cum = Vec::with_capacity(eig.phi.len());
        let mut acc = 0.0f64;
        for &p in &eig.phi {
            acc += p * p;
            cum.push(acc);
        }
        StationarySampler { cum }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.gen::<f64>() * self.cum[self.cum.len() - 1];
        match self.cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(self.cum.len() - 1),
            Err(i) => i.min(self.cum.len() - 1),
        }
    }
}

/// Draws a site from the invariant measure φ_N²/Σφ_N².
pub fn sample_stationary<R: Rng>(eig: &EigenPair, rng: &mut R) -> usize {
    StationarySampler::new(eig).sample(rng)
}

/// Default step budget: a ~20x multiple of the first-order cover time, so
/// that non-covering runs are astronomically unlikely while runtime stays
/// bounded.
pub fn default_t_max(domain: &Domain, target: &TargetSet, alpha: f64) -> u64 {
    let g0 = crate::constants::green_origin(domain.dim().max(3));
    let nd = (domain.n as f64).powi(domain.dim() as i32);
    let lam_card = (target.sites.len() as f64).max(2.0);
    (20.0 * g0 / alpha * nd * lam_card.ln()).ceil() as u64
}

/// Runs the confined walk until Λ_N is covered or the budget is exhausted;
/// deterministic given (seed, replica_id).
pub fn run_cover(
    domain: &Domain,
    kernel: &ConfinedKernel,
    eig: &EigenPair,
    target: &TargetSet,
    cfg: &WalkConfig,
) -> Result<CoverResult, WalkError> {
    assert!(cfg.t_max >= 1);
    let mut rng = crate::rngstream::replica_rng(cfg.seed, cfg.replica_id);
    let mut x = match cfg.start {
        Start::Site(i) => i,
        Start::Stationary => StationarySampler::new(eig).sample(&mut rng),
    };
    let start_site = x;

    let m = target.sites.len();
    let mut hit_time: Vec<Option<u64>> = vec![None; m];
    let mut unhit = m;
    let mut last_hit = 0u64;
    let record = |site: usize,
                  t: u64,
                  hit_time: &mut Vec<Option<u64>>,
                  unhit: &mut usize,
                  last_hit: &mut u64| {
        let loc = target.target_local[site];
        if loc >= 0 && hit_time[loc as usize].is_none() {
            hit_time[loc as usize] = Some(t);
            *unhit -= 1;
            *last_hit = t;
        }
    };

    let mut t = 0u64;
    record(x, 0, &mut hit_time, &mut unhit, &mut last_hit);
    while unhit > 0 && t < cfg.t_max {
        x = kernel.step(domain, x, &mut rng);
        t += 1;
        record(x, t, &mut hit_time, &mut unhit, &mut last_hit);
    }

    let covered = unhit == 0;
    let result = CoverResult {
        hit_time,
        cover_time: if covered { Some(last_hit) } else { None },
        trajectory_length: t,
        start_site,
    };
    if covered {
        Ok(result)
    } else {
        Err(WalkError::BudgetExhausted { t_max: cfg.t_max, unhit, partial: result })
    }
}

/// Target sites not yet hit at time `t`, with rescaled coordinates x/N.
pub fn late_points(
    domain: &Domain,
    target: &TargetSet,
    result: &CoverResult,
    t: u64,
) -> Vec<(usize, Vec<f64>)> {
    let n = domain.n as f64;
    target
        .sites
        .iter()
        .enumerate()
        .filter(|(k, _)| match result.hit_time[*k] {
            Some(h) => h > t,
            None => true,
        })
        .map(|(_, &site)| {
            let coords = domain.sites[site].iter().map(|&c| c as f64 / n).collect();
            (site, coords)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, build_target, ShapeSpec};
    use crate::spectral::solve_principal_eigenpair;

    fn ball_setup(n: i64) -> (Domain, EigenPair, ConfinedKernel, TargetSet) {
        let dom = build_domain(&ShapeSpec::unit_ball(3), n).unwrap();
        let eig = solve_principal_eigenpair(&dom, 1e-12, 200_000).unwrap();
        let ker = ConfinedKernel::new(&dom, &eig);
        let tgt = build_target(&dom, &ShapeSpec::ball(3, vec![0.0; 3], 0.5), 0.2).unwrap();
        (dom, eig, ker, tgt)
    }

    #[test]
    fn stationary_sampler_matches_weights() {
        let dom = build_domain(&ShapeSpec::unit_ball(3), 4).unwrap();
        let eig = solve_principal_eigenpair(&dom, 1e-12, 100_000).unwrap();
        let sampler = StationarySampler::new(&eig);
        let mut rng = crate::rngstream::replica_rng(11, 0);
        let draws = 1_000_000usize;
        let mut counts = vec![0u64; dom.len()];
        for _ in 0..draws {
            counts[sampler.sample(&mut rng)] += 1;
        }
        let total: f64 = eig.phi.iter().map(|p| p * p).sum();
        for i in 0..dom.len() {
            let p = eig.phi[i] * eig.phi[i] / total;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let emp = counts[i] as f64 / draws as f64;
            assert!((emp - p).abs() < 4.0 * se + 1e-6, "site {}: {} vs {}", i, emp, p);
        }
    }

    #[test]
    fn step_frequencies_match_kernel() {
        let (dom, _eig, ker, _tgt) = ball_setup(6);
        // a site straddling the boundary region: fewest interior neighbors
        let x = (0..dom.len()).max_by_key(|&i| dom.out_degree[i]).unwrap();
        let deg = dom.neighbors(x).len();
        let mut rng = crate::rngstream::replica_rng(5, 1);
        let draws = 1_000_000usize;
        let mut counts = vec![0u64; dom.len()];
        for _ in 0..draws {
            counts[ker.step(&dom, x, &mut rng)] += 1;
        }
        for k in 0..deg {
            let y = dom.neighbors(x)[k] as usize;
            let p = ker.prob(&dom, x, k);
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            let emp = counts[y] as f64 / draws as f64;
            assert!((emp - p).abs() < 4.0 * se, "slot {}: {} vs {}", k, emp, p);
        }
    }

    #[test]
    fn cover_of_start_singleton_is_zero() {
        let (dom, eig, ker, _) = ball_setup(6);
        // singleton target = the origin site
        let tgt = build_target(&dom, &ShapeSpec::ball(3, vec![0.0; 3], 0.5 / 6.0), 0.0).unwrap();
        assert_eq!(tgt.sites.len(), 1);
        let start = tgt.sites[0];
        let cfg = WalkConfig { start: Start::Site(start), t_max: 10, seed: 1, replica_id: 0 };
        let res = run_cover(&dom, &ker, &eig, &tgt, &cfg).unwrap();
        assert_eq!(res.cover_time, Some(0));
        assert_eq!(res.hit_time[0], Some(0));
    }

    #[test]
    fn budget_exhaustion_carries_partial() {
        let (dom, eig, ker, tgt) = ball_setup(8);
        let cfg = WalkConfig { start: Start::Stationary, t_max: 5, seed: 3, replica_id: 0 };
        match run_cover(&dom, &ker, &eig, &tgt, &cfg) {
            Err(WalkError::BudgetExhausted { partial, unhit, .. }) => {
                assert!(unhit > 0);
                assert_eq!(partial.trajectory_length, 5);
                assert!(partial.cover_time.is_none());
            }
            Ok(_) => panic!("a 5-step walk cannot cover the target"),
        }
    }

    #[test]
    fn determinism_across_replicas() {
        let (dom, eig, ker, tgt) = ball_setup(6);
        let cfg = WalkConfig {
            start: Start::Stationary,
            t_max: 10_000_000,
            seed: 99,
            replica_id: 4,
        };
        let a = run_cover(&dom, &ker, &eig, &tgt, &cfg).unwrap();
        let b = run_cover(&dom, &ker, &eig, &tgt, &cfg).unwrap();
        assert_eq!(a.cover_time, b.cover_time);
        assert_eq!(a.hit_time, b.hit_time);
        assert_eq!(a.start_site, b.start_site);
    }

    #[test]
    fn late_points_shrink_with_time() {
        let (dom, eig, ker, tgt) = ball_setup(6);
        let cfg = WalkConfig {
            start: Start::Stationary,
            t_max: 100_000_000,
            seed: 7,
            replica_id: 0,
        };
        let res = run_cover(&dom, &ker, &eig, &tgt, &cfg).unwrap();
        let cover = res.cover_time.unwrap();
        assert!(late_points(&dom, &tgt, &res, cover).is_empty());
        let at_zero = late_points(&dom, &tgt, &res, 0);
        // everything except sites hit at t = 0 (i.e. at most the start site)
        assert!(at_zero.len() >= tgt.sites.len() - 1);
        let halfway = late_points(&dom, &tgt, &res, cover / 2);
        assert!(halfway.len() <= at_zero.len());
        assert!(!halfway.is_empty() || cover == 0);
        // rescaled coordinates lie in the continuum target closure
        for (_, xs) in &at_zero {
            let r: f64 = xs.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(r < 0.5);
        }
    }

    #[test]
    fn occupation_frequencies_converge_to_phi_squared() {
        let (dom, eig, ker, _tgt) = ball_setup(10);
        let mut rng = crate::rngstream::replica_rng(123, 0);
        let sampler = StationarySampler::new(&eig);
        let mut x = sampler.sample(&mut rng);
        let steps = 10_000_000u64;
        // probe: origin plus 4 spread-out sites
        let probes: Vec<usize> = vec![
            dom.site_index(&[0, 0, 0]).unwrap(),
            dom.site_index(&[4, 0, 0]).unwrap(),
            dom.site_index(&[0, 6, 0]).unwrap(),
            dom.site_index(&[-3, -3, 3]).unwrap(),
            dom.site_index(&[8, 0, 0]).unwrap(),
        ];
        let mut counts = vec![0u64; probes.len()];
        for _ in 0..steps {
            x = ker.step(&dom, x, &mut rng);
            for (k, &p) in probes.iter().enumerate() {
                if x == p {
                    counts[k] += 1;
                }
            }
        }
        let total: f64 = eig.phi.iter().map(|p| p * p).sum();
        let mut tv = 0.0f64;
        for (k, &p) in probes.iter().enumerate() {
            let exact = eig.phi[p] * eig.phi[p] / total;
            let emp = counts[k] as f64 / steps as f64;
            tv += 0.5 * (exact - emp).abs();
        }
        assert!(tv < 0.02, "total variation over probes = {}", tv);
    }

    /// Spectral identity of the conditioned walk: for a bulk start x and the
    /// hitting of a shell K before leaving the domain,
    /// P^conf_x(A) = φ(x)⁻¹ E^srw_x[1_A λ^{−H} φ(S_H) 1_{H < exit}].
    #[test]
    fn conditioned_vs_weighted_srw() {
        let (dom, eig, ker, _tgt) = ball_setup(8);
        // K = shell of radius ∈ [4,5); event A = first shell hit has x-coordinate > 0
        let in_shell = |p: &[i64]| {
            let r2 = crate::lattice::norm_sq(p);
            (16..25).contains(&r2)
        };
        let x0 = dom.site_index(&[0, 0, 0]).unwrap();
        let replicas = 200_000usize;

        // confined-walk estimate of P(A)
        let mut rng = crate::rngstream::replica_rng(17, 0);
        let mut hits_a = 0u64;
        for _ in 0..replicas {
            let mut x = x0;
            loop {
                x = ker.step(&dom, x, &mut rng);
                if in_shell(&dom.sites[x]) {
                    if dom.sites[x][0] > 0 {
                        hits_a += 1;
                    }
                    break;
                }
            }
        }
        let p_conf = hits_a as f64 / replicas as f64;

        // weighted SRW estimate of the same probability
        let mut rng = crate::rngstream::replica_rng(17, 1);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        let dim = 3usize;
        for _ in 0..replicas {
            let mut p = dom.sites[x0].clone();
            let mut h = 0u64;
            let (weight, in_a) = loop {
                let dir = rng.gen_range(0..2 * dim);
                let axis = dir / 2;
                p[axis] += if dir % 2 == 0 { 1 } else { -1 };
                h += 1;
                match dom.site_index(&p) {
                    None => break (0.0, false), // left the domain before hitting K
                    Some(s) => {
                        if in_shell(&dom.sites[s]) {
                            let w = eig.lambda.powi(-(h as i32)) * eig.phi[s] / eig.phi[x0];
                            break (w, dom.sites[s][0] > 0);
                        }
                    }
                }
            };
            den += weight;
            if in_a {
                num += weight;
            }
        }
        // den estimates E[λ^{−H}φ(S_H)1_{H<τ}]/φ(x) = 1, num estimates P(A)
        assert!((den / replicas as f64 - 1.0).abs() < 0.05, "den = {}", den / replicas as f64);
        let p_srw = num / replicas as f64;
        assert!((p_conf - p_srw).abs() < 0.02, "{} vs {}", p_conf, p_srw);
    }
}
