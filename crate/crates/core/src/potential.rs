//! Tilted lattice potential theory on Z^d (d ≥ 3): the tilt field Ψ_N,
//! tilted walks, truncated-box Green functions, equilibrium measures and
//! capacities.
//!
//! All linear algebra is matrix-free. The tilted walk has kernel p(x,y) =
//! Ψ(y)/S(x) with S(x) = Σ_{|e|=1}Ψ(x+e); it is reversible with respect to
//! m(x) = Ψ(x)S(x) (detailed balance m(x)p(x,y) = Ψ(x)Ψ(y)). Solves happen
//! on a centered cube with absorbing exterior; conjugate gradients run on the
//! symmetrized operator (Mz)(i) = z(i) − b(i)·Σ_{j~i} b(j)z(j) with b =
//! √(Ψ/S), which shares its solution with the unsymmetrized system through
//! diagonal scaling by √m.
//!
//! Capacity convention: the equilibrium weight of z ∈ K is
//!     e_K(z) = P_z(no return to K) · Ψ(z) · (1/2d)·S(z),
//! i.e. the degree factor is absorbed (the untilted singleton capacity is
//! 1/g(0), and in the tilt bulk the weight equals λ_N φ_N²(z)). Multiplying
//! by 2d converts to the raw conductance-degree convention.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::domain::Domain;
use crate::lattice::GridBox;
use crate::spectral::EigenPair;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("iterative solve did not reach tolerance {tol:.1e} after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64, tol: f64 },
    #[error("relative standard error of the capacity estimate is {rse:.3} > 0.05; increase samples")]
    InsufficientSamples { rse: f64 },
    #[error("dimension {0} < 3: the tilted walk is not transient")]
    NotTransient(usize),
}

/// The tilt Ψ_N: φ_N on the enlarged target, 1 everywhere else (and beyond
/// the stored grid). A `uniform` field gives the plain simple random walk.
#[derive(Debug, Clone)]
pub struct TiltField {
    pub dim: usize,
    grid: Option<(GridBox, Vec<f64>)>,
}

impl TiltField {
    /// Ψ ≡ 1 (untilted walk).
    pub fn uniform(dim: usize) -> Self {
        TiltField { dim, grid: None }
    }

    /// Ψ = φ_N on Λ_N^ε, 1 elsewhere.
    pub fn from_target(domain: &Domain, eig: &EigenPair, target: &crate::domain::TargetSet) -> Self {
        let mut values = vec![1.0f64; domain.grid.len()];
        for &i in &target.enlarged {
            let cell = domain.grid.index(&domain.sites[i]).unwrap();
            values[cell] = eig.phi[i];
        }
        TiltField { dim: domain.dim(), grid: Some((domain.grid.clone(), values)) }
    }

    #[inline]
    pub fn psi(&self, p: &[i64]) -> f64 {
        match &self.grid {
            None => 1.0,
            Some((g, v)) => match g.index(p) {
                Some(c) => v[c],
                None => 1.0,
            },
        }
    }

    /// S(x) = Σ_{|e|=1} Ψ(x+e), the full neighbor sum.
    pub fn neighbor_sum(&self, p: &[i64]) -> f64 {
        let mut q = [0i64; 8];
        let d = self.dim;
        q[..d].copy_from_slice(p);
        let mut s = 0.0;
        for axis in 0..d {
            for step in [-1i64, 1] {
                q[axis] = p[axis] + step;
                s += self.psi(&q[..d]);
            }
            q[axis] = p[axis];
        }
        s
    }

    /// Equilibrium weight Ψ(z)·(1/2d)·S(z); equals λ_N φ_N²(z) in the tilt
    /// bulk and 1 in the untilted region.
    pub fn weight(&self, p: &[i64]) -> f64 {
        self.psi(p) * self.neighbor_sum(p) / (2.0 * self.dim as f64)
    }

    /// Reversing measure m(x) = Ψ(x)·S(x).
    pub fn reversing_measure(&self, p: &[i64]) -> f64 {
        self.psi(p) * self.neighbor_sum(p)
    }

    /// One tilted-walk step, in place. Outside the tilt support this is a
    /// uniform nearest-neighbor step.
    #[inline]
    pub fn step_in_place<R: Rng>(&self, p: &mut [i64], rng: &mut R) {
        let d = self.dim;
        // fast path: if some axis puts p more than one cell outside the
        // stored grid, every neighbor lies outside it and carries Ψ = 1
        let uniform = match &self.grid {
            None => true,
            Some((g, _)) => (0..d).any(|k| p[k] < g.lo[k] - 1 || p[k] > g.hi[k] + 1),
        };
        if uniform {
            let dir = rng.gen_range(0..2 * d);
            p[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            return;
        }
        let mut w = [0.0f64; 16];
        let mut q = [0i64; 8];
        q[..d].copy_from_slice(p);
        let mut total = 0.0;
        for axis in 0..d {
            for (s, step) in [-1i64, 1].into_iter().enumerate() {
                q[axis] = p[axis] + step;
                total += self.psi(&q[..d]);
                w[2 * axis + s] = total;
            }
            q[axis] = p[axis];
        }
        let u = rng.gen::<f64>() * total;
        for k in 0..2 * d {
            if u < w[k] {
                p[k / 2] += if k % 2 == 0 { -1 } else { 1 };
                return;
            }
        }
        p[d - 1] += 1;
    }
}

/// Matrix-free solver for the tilted walk killed outside a centered cube.
pub struct BoxSolver {
    pub grid: GridBox,
    pub dim: usize,
    /// b(x) = √(Ψ(x)/S(x)) per cell.
    b: Vec<f64>,
    /// m(x) = Ψ(x)·S(x) per cell.
    m: Vec<f64>,
}

impl BoxSolver {
    pub fn new(psi: &TiltField, center: &[i64], radius: i64) -> Self {
        let grid = GridBox::cube(center, radius);
        let n = grid.len();
        let mut b = vec![0.0f64; n];
        let mut m = vec![0.0f64; n];
        for (cell, p) in grid.iter_points() {
            let ps = psi.psi(&p);
            let s = psi.neighbor_sum(&p);
            b[cell] = (ps / s).sqrt();
            m[cell] = ps * s;
        }
        BoxSolver { grid, dim: psi.dim, b, m }
    }

    /// Applies the symmetrized operator M = I − B, (Bz)(i) = b(i)Σ_j b(j)z(j)
    /// over in-box neighbors j, skipping cells where `blocked` is true
    /// (those are treated as absorbing, like the exterior).
    fn apply(&self, z: &[f64], blocked: Option<&[bool]>, out: &mut [f64]) {
        let d = self.dim;
        let dims = self.grid.dims();
        let strides = self.grid.strides();
        let n = self.grid.len();
        out.copy_from_slice(z);
        // accumulate -b_i * sum_j b_j z_j axis by axis using flat indexing
        let bz: Vec<f64> = (0..n)
            .map(|i| {
                let v = self.b[i] * z[i];
                match blocked {
                    Some(mask) if mask[i] => 0.0,
                    _ => v,
                }
            })
            .collect();
        for i in 0..n {
            if let Some(mask) = blocked {
                if mask[i] {
                    out[i] = z[i];
                    continue;
                }
            }
            let mut acc = 0.0;
            let mut rem = i;
            for axis in 0..d {
                let coord = rem / strides[axis];
                rem %= strides[axis];
                if coord > 0 {
                    acc += bz[i - strides[axis]];
                }
                if coord + 1 < dims[axis] {
                    acc += bz[i + strides[axis]];
                }
            }
            out[i] -= self.b[i] * acc;
        }
    }

    /// Conjugate-gradient solve of M y = rhs to relative residual `tol`.
    pub fn cg(
        &self,
        rhs: &[f64],
        blocked: Option<&[bool]>,
        tol: f64,
    ) -> Result<(Vec<f64>, usize), PotentialError> {
        let n = rhs.len();
        let mut y = vec![0.0f64; n];
        let mut r = rhs.to_vec();
        if let Some(mask) = blocked {
            for i in 0..n {
                if mask[i] {
                    r[i] = 0.0;
                }
            }
        }
        let rhs_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rhs_norm == 0.0 {
            return Ok((y, 0));
        }
        let mut p = r.clone();
        let mut ap = vec![0.0f64; n];
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let max_iter = 40 * self.grid.dims()[0] + 2000;
        for it in 0..max_iter {
            self.apply(&p, blocked, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            let alpha = rr / pap;
            for i in 0..n {
                y[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            if rr_new.sqrt() <= tol * rhs_norm {
                return Ok((y, it + 1));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        Err(PotentialError::NoConvergence {
            iterations: max_iter,
            residual: rr.sqrt() / rhs_norm,
            tol,
        })
    }
}

/// One row G(x, ·) of the killed-walk Green function on a truncated box.
pub struct GreenSolve {
    pub grid: GridBox,
    pub source: Vec<i64>,
    /// G(x, y) for every box cell y.
    pub row: Vec<f64>,
    /// m(y) per cell, for the reversed row.
    pub m: Vec<f64>,
    /// Max G-value on the outermost cell layer (truncation-error proxy).
    pub edge_proxy: f64,
    pub iterations: usize,
    pub radius_factor: f64,
}

impl GreenSolve {
    /// G(x, y); zero outside the box.
    pub fn g(&self, y: &[i64]) -> f64 {
        match self.grid.index(y) {
            Some(c) => self.row[c],
            None => 0.0,
        }
    }

    /// G(y, x) from m-reversibility m(x)G(x,y) = m(y)G(y,x).
    pub fn g_reversed(&self, y: &[i64]) -> f64 {
        let cx = self.grid.index(&self.source).unwrap();
        match self.grid.index(y) {
            Some(cy) => self.row[cy] * self.m[cx] / self.m[cy],
            None => 0.0,
        }
    }
}

/// Solves for the Green row G(x,·) of the walk killed outside the cube of
/// the given radius around `x`.
pub fn green_function(
    psi: &TiltField,
    x: &[i64],
    box_radius: i64,
    tol: f64,
) -> Result<GreenSolve, PotentialError> {
    if psi.dim < 3 {
        return Err(PotentialError::NotTransient(psi.dim));
    }
    let solver = BoxSolver::new(psi, x, box_radius);
    green_row_on(&solver, psi, x, tol)
}

/// Green row on an existing solver (shared box across several sources).
pub fn green_row_on(
    solver: &BoxSolver,
    _psi: &TiltField,
    x: &[i64],
    tol: f64,
) -> Result<GreenSolve, PotentialError> {
    let cx = solver
        .grid
        .index(x)
        .expect("source must lie inside the solve box");
    let n = solver.grid.len();
    let mut rhs = vec![0.0f64; n];
    rhs[cx] = solver.m[cx].sqrt();
    let (z, iterations) = solver.cg(&rhs, None, tol)?;
    // v(y) = G(y, x) = z(y)/√m(y); the row follows from reversibility:
    // G(x, y) = m(y)·v(y)/m(x)
    let mut row = vec![0.0f64; n];
    for i in 0..n {
        row[i] = solver.m[i].sqrt() * z[i] / solver.m[cx];
    }
    // truncation proxy: max over the outermost layer
    let mut edge = 0.0f64;
    let dims = solver.grid.dims();
    let strides = solver.grid.strides();
    for i in 0..n {
        let mut rem = i;
        let mut on_edge = false;
        for axis in 0..solver.dim {
            let c = rem / strides[axis];
            rem %= strides[axis];
            if c == 0 || c + 1 == dims[axis] {
                on_edge = true;
                break;
            }
        }
        if on_edge && row[i] > edge {
            edge = row[i];
        }
    }
    Ok(GreenSolve {
        grid: solver.grid.clone(),
        source: x.to_vec(),
        row,
        m: solver.m.clone(),
        edge_proxy: edge,
        iterations,
        radius_factor: (dims[0] as f64 - 1.0) / 2.0,
    })
}

/// Boundary exit flux of the box for the source of `gs`: for each exterior
/// cell b adjacent to the box, P_x(first exit lands on b). Used for the
/// infinite-lattice tail correction.
pub fn exit_flux(gs: &GreenSolve, psi: &TiltField) -> Vec<(Vec<i64>, f64)> {
    let d = psi.dim;
    let mut flux: Vec<(Vec<i64>, f64)> = Vec::new();
    let mut q = vec![0i64; d];
    for (cell, w) in gs.grid.iter_points() {
        // only cells on the outermost layer can exit
        let on_edge = (0..d).any(|k| w[k] == gs.grid.lo[k] || w[k] == gs.grid.hi[k]);
        if !on_edge || gs.row[cell] == 0.0 {
            continue;
        }
        let s_w = psi.neighbor_sum(&w);
        for axis in 0..d {
            for step in [-1i64, 1] {
                q.copy_from_slice(&w);
                q[axis] += step;
                if gs.grid.contains(&q) {
                    continue;
                }
                let p_exit = psi.psi(&q) / s_w;
                flux.push((q.clone(), gs.row[cell] * p_exit));
            }
        }
    }
    flux
}

/// G(x,y) corrected for box truncation: adds the expected visits accumulated
/// after the first box exit, using the r^{2−d} free-lattice asymptotic for
/// the return Green value (the box edge sits in the untilted region).
pub fn corrected_green(
    gs: &GreenSolve,
    flux: &[(Vec<i64>, f64)],
    y: &[i64],
    dim: usize,
) -> f64 {
    let c_d = crate::constants::green_asymptotic_coef(dim);
    let mut extra = 0.0;
    for (b, f) in flux {
        let r2: i64 = b.iter().zip(y).map(|(&a, &c)| (a - c) * (a - c)).sum();
        extra += f * c_d * (r2 as f64).sqrt().powi(2 - dim as i32);
    }
    gs.g(y) + extra
}

/// Equilibrium measure of a finite set K.
#[derive(Debug, Clone)]
pub struct EquilibriumMeasure {
    pub points: Vec<Vec<i64>>,
    /// e_K(z) per point of K (zero off the inner boundary).
    pub weights: Vec<f64>,
    pub capacity: f64,
    /// Monte Carlo only: standard error of the capacity.
    pub capacity_std_err: Option<f64>,
    /// Escape probabilities P_z(no return to K), aligned with `points`.
    pub escape: Vec<f64>,
}

impl EquilibriumMeasure {
    /// Normalized entrance law ē_K.
    pub fn normalized(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w / self.capacity).collect()
    }
}

pub enum EqMethod {
    LinearSolve,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Escape-probability solve: for every z in K, the probability that the
/// tilted walk started at z never returns to K (exit of the truncated box
/// counts as escape; the truncation bias scales like (K-diameter/R)^{d−2}).
fn escape_probabilities_linear(
    psi: &TiltField,
    k_points: &[Vec<i64>],
    box_radius: i64,
    tol: f64,
) -> Result<Vec<f64>, PotentialError> {
    let d = psi.dim;
    // center the box on the rounded centroid of K
    let mut center = vec![0i64; d];
    for p in k_points {
        for a in 0..d {
            center[a] += p[a];
        }
    }
    for c in center.iter_mut() {
        *c = (*c as f64 / k_points.len() as f64).round() as i64;
    }
    let solver = BoxSolver::new(psi, &center, box_radius);
    let n = solver.grid.len();
    let mut blocked = vec![false; n];
    for p in k_points {
        let c = solver.grid.index(p).expect("K must lie inside the solve box");
        blocked[c] = true;
    }
    // u = P_·(hit K before leaving the box): on non-K cells solve
    // (I − P_restricted)u = P(step directly into K); symmetrized via z = √m·u
    let mut rhs = vec![0.0f64; n];
    let mut q = vec![0i64; d];
    for (cell, w) in solver.grid.iter_points() {
        if blocked[cell] {
            continue;
        }
        let s_w = psi.neighbor_sum(&w);
        let mut into_k = 0.0;
        for axis in 0..d {
            for step in [-1i64, 1] {
                q.copy_from_slice(&w);
                q[axis] += step;
                if let Some(cj) = solver.grid.index(&q) {
                    if blocked[cj] {
                        into_k += psi.psi(&q) / s_w;
                    }
                }
            }
        }
        rhs[cell] = solver.m[cell].sqrt() * into_k;
    }
    let (z, _) = solver.cg(&rhs, Some(&blocked), tol)?;
    let u: Vec<f64> = (0..n)
        .map(|i| if blocked[i] { 1.0 } else { z[i] / solver.m[i].sqrt() })
        .collect();

    // escape(z) = Σ_{y~z, y∉K} p(z,y)·(1 − u(y)), with u ≡ 0 outside the box
    let mut escape = Vec::with_capacity(k_points.len());
    for p in k_points {
        let s_p = psi.neighbor_sum(p);
        let mut esc = 0.0;
        for axis in 0..d {
            for step in [-1i64, 1] {
                q.copy_from_slice(p);
                q[axis] += step;
                let u_y = match solver.grid.index(&q) {
                    Some(c) => {
                        if blocked[c] {
                            continue; // steps back into K never escape
                        }
                        u[c]
                    }
                    None => 0.0,
                };
                esc += psi.psi(&q) / s_p * (1.0 - u_y);
            }
        }
        escape.push(esc);
    }
    Ok(escape)
}

fn escape_probabilities_mc(
    psi: &TiltField,
    k_points: &[Vec<i64>],
    r_escape: f64,
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let d = psi.dim;
    let keys: std::collections::HashSet<u128> =
        k_points.iter().map(|p| crate::lattice::pack_point(p)).collect();
    let mut center = vec![0.0f64; d];
    for p in k_points {
        for a in 0..d {
            center[a] += p[a] as f64;
        }
    }
    for c in center.iter_mut() {
        *c /= k_points.len() as f64;
    }
    let r2_escape = r_escape * r_escape;
    let results: Vec<(f64, f64)> = k_points
        .par_iter()
        .enumerate()
        .map(|(zi, z)| {
            let mut rng = crate::rngstream::replica_rng(seed, zi as u64);
            let mut escaped = 0u64;
            let mut p = vec![0i64; d];
            for _ in 0..samples {
                p.copy_from_slice(z);
                loop {
                    psi.step_in_place(&mut p, &mut rng);
                    if keys.contains(&crate::lattice::pack_point(&p)) {
                        break; // returned to K
                    }
                    let r2: f64 = p
                        .iter()
                        .zip(&center)
                        .map(|(&a, &c)| (a as f64 - c) * (a as f64 - c))
                        .sum();
                    if r2 > r2_escape {
                        escaped += 1;
                        break;
                    }
                }
            }
            let phat = escaped as f64 / samples as f64;
            let se = (phat * (1.0 - phat) / samples as f64).sqrt();
            (phat, se)
        })
        .collect();
    (
        results.iter().map(|r| r.0).collect(),
        results.iter().map(|r| r.1).collect(),
    )
}

/// Equilibrium measure e_K(z) = P_z(no return)·Ψ(z)·(1/2d)S(z) and the
/// capacity cap(K) = Σ_z e_K(z).
pub fn equilibrium_measure(
    psi: &TiltField,
    k_points: &[Vec<i64>],
    method: EqMethod,
    box_radius: i64,
    r_escape: f64,
    tol: f64,
) -> Result<EquilibriumMeasure, PotentialError> {
    if psi.dim < 3 {
        return Err(PotentialError::NotTransient(psi.dim));
    }
    assert!(!k_points.is_empty());
    let (escape, se): (Vec<f64>, Option<Vec<f64>>) = match method {
        EqMethod::LinearSolve => {
            (escape_probabilities_linear(psi, k_points, box_radius, tol)?, None)
        }
        EqMethod::MonteCarlo { samples, seed } => {
            let (esc, se) = escape_probabilities_mc(psi, k_points, r_escape, samples, seed);
            (esc, Some(se))
        }
    };
    let weights: Vec<f64> = k_points
        .iter()
        .zip(&escape)
        .map(|(p, &e)| e * psi.weight(p))
        .collect();
    let capacity: f64 = weights.iter().sum();
    let capacity_std_err = se.as_ref().map(|ses| {
        ses.iter()
            .zip(k_points)
            .map(|(s, p)| (s * psi.weight(p)).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    if let Some(se) = capacity_std_err {
        if capacity > 0.0 && se / capacity > 0.05 {
            return Err(PotentialError::InsufficientSamples { rse: se / capacity });
        }
    }
    Ok(EquilibriumMeasure {
        points: k_points.to_vec(),
        weights,
        capacity,
        capacity_std_err,
        escape,
    })
}

/// Capacity of a singleton from a Green solve: cap({x}) = w(x)/G(x,x), since
/// the no-return probability is 1/G(x,x).
pub fn point_capacity(
    psi: &TiltField,
    x: &[i64],
    box_radius: i64,
    tol: f64,
) -> Result<f64, PotentialError> {
    let gs = green_function(psi, x, box_radius, tol)?;
    Ok(psi.weight(x) / gs.g(x))
}

/// Two-point capacity by the closed formula
/// cap({x,y}) = [cap_x·P_x(H_y=∞) + cap_y·P_y(H_x=∞)] / [1 − P_x(H_y<∞)P_y(H_x<∞)]
/// with P_x(H_y<∞) = G(x,y)/G(y,y), all on one shared truncation box.
pub fn two_point_capacity(
    psi: &TiltField,
    x: &[i64],
    y: &[i64],
    box_radius: i64,
    tol: f64,
) -> Result<f64, PotentialError> {
    let d = psi.dim;
    let center: Vec<i64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| ((a + b) as f64 / 2.0).round() as i64)
        .collect();
    assert_eq!(center.len(), d);
    let solver = BoxSolver::new(psi, &center, box_radius);
    let gx = green_row_on(&solver, psi, x, tol)?;
    let gy = green_row_on(&solver, psi, y, tol)?;
    let p_xy = gx.g(y) / gy.g(y); // P_x(H_y < ∞)
    let p_yx = gy.g(x) / gx.g(x);
    let cap_x = psi.weight(x) / gx.g(x);
    let cap_y = psi.weight(y) / gy.g(y);
    Ok((cap_x * (1.0 - p_xy) + cap_y * (1.0 - p_yx)) / (1.0 - p_xy * p_yx))
}

/// Report of the last-exit identity P_x(H_K<∞) = Σ_z G(x,z)·e_K(z)/w(z):
/// both sides computed independently on the same truncation box.
#[derive(Debug, Clone)]
pub struct LastExitReport {
    pub per_probe: Vec<(Vec<i64>, f64, f64)>, // (probe, lhs, rhs)
    pub max_relative_gap: f64,
}

pub fn last_exit_check(
    psi: &TiltField,
    k_points: &[Vec<i64>],
    probes: &[Vec<i64>],
    box_radius: i64,
    tol: f64,
) -> Result<LastExitReport, PotentialError> {
    let d = psi.dim;
    let mut center = vec![0i64; d];
    for p in k_points {
        for a in 0..d {
            center[a] += p[a];
        }
    }
    for c in center.iter_mut() {
        *c = (*c as f64 / k_points.len() as f64).round() as i64;
    }

    // LHS: hitting probability of K from each probe, by the masked solve
    let solver = BoxSolver::new(psi, &center, box_radius);
    let n = solver.grid.len();
    let mut blocked = vec![false; n];
    for p in k_points {
        blocked[solver.grid.index(p).unwrap()] = true;
    }
    let mut rhs = vec![0.0f64; n];
    let mut q = vec![0i64; d];
    for (cell, w) in solver.grid.iter_points() {
        if blocked[cell] {
            continue;
        }
        let s_w = psi.neighbor_sum(&w);
        let mut into_k = 0.0;
        for axis in 0..d {
            for step in [-1i64, 1] {
                q.copy_from_slice(&w);
                q[axis] += step;
                if let Some(cj) = solver.grid.index(&q) {
                    if blocked[cj] {
                        into_k += psi.psi(&q) / s_w;
                    }
                }
            }
        }
        rhs[cell] = solver.m[cell].sqrt() * into_k;
    }
    let (z, _) = solver.cg(&rhs, Some(&blocked), tol)?;
    let hitting: Vec<f64> = (0..n)
        .map(|i| if blocked[i] { 1.0 } else { z[i] / solver.m[i].sqrt() })
        .collect();

    // RHS: equilibrium measure + Green columns G(·, z) on the same box
    let eq = equilibrium_measure(
        psi,
        k_points,
        EqMethod::LinearSolve,
        box_radius,
        0.0,
        tol,
    )?;
    let mut green_rows = Vec::new();
    for zp in k_points {
        green_rows.push(green_row_on(&solver, psi, zp, tol)?);
    }

    let mut per_probe = Vec::new();
    let mut max_gap = 0.0f64;
    for x in probes {
        let cx = solver.grid.index(x).expect("probe outside box");
        let lhs = hitting[cx];
        let mut rhs_val = 0.0;
        for (k, zp) in k_points.iter().enumerate() {
            // G(x, z) via reversibility from the row G(z, ·)
            let g_xz = green_rows[k].g_reversed(x);
            rhs_val += g_xz * eq.weights[k] / psi.weight(zp);
        }
        let gap = (lhs - rhs_val).abs() / lhs.abs().max(1e-300);
        if gap > max_gap {
            max_gap = gap;
        }
        per_probe.push((x.clone(), lhs, rhs_val));
    }
    Ok(LastExitReport { per_probe, max_relative_gap: max_gap })
}
