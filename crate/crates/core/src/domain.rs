//! Discrete blow-ups D_N = (N·D) ∩ Z^d of a continuum shape, inner targets
//! Λ_N with their ε-enlargements, and the adjacency structure of the induced
//! site graph.

use std::collections::HashMap;
use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{distance_sq_transform, pack_point, GridBox};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid shape: {0}")]
    BadShape(String),
    #[error("no lattice point falls inside the blown-up shape")]
    EmptyDomain,
    #[error("induced site graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("target must keep continuum distance >= 2*eps = {required} from the outer boundary (found {found})")]
    MarginViolation { required: f64, found: f64 },
    #[error("target set contains no lattice point")]
    EmptyTarget,
}

/// Continuum shape in R^d; all membership tests use strict inequalities
/// (open sets), so lattice points exactly on the scaled boundary are excluded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShapeSpec {
    pub dim: usize,
    pub kind: ShapeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { r_in: f64, r_out: f64 },
}

impl ShapeSpec {
    pub fn ball(dim: usize, center: Vec<f64>, radius: f64) -> Self {
        ShapeSpec { dim, kind: ShapeKind::Ball { center, radius } }
    }

    pub fn unit_ball(dim: usize) -> Self {
        Self::ball(dim, vec![0.0; dim], 1.0)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        ShapeSpec { dim, kind: ShapeKind::Box { lo: vec![lo; dim], hi: vec![hi; dim] } }
    }

    pub fn annulus(dim: usize, r_in: f64, r_out: f64) -> Self {
        ShapeSpec { dim, kind: ShapeKind::Annulus { r_in, r_out } }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.dim == 0 {
            return Err(DomainError::BadShape("dimension must be >= 1".into()));
        }
        match &self.kind {
            ShapeKind::Ball { center, radius } => {
                if center.len() != self.dim {
                    return Err(DomainError::BadShape("center dimension mismatch".into()));
                }
                if !(*radius > 0.0) {
                    return Err(DomainError::BadShape("ball radius must be positive".into()));
                }
            }
            ShapeKind::Box { lo, hi } => {
                if lo.len() != self.dim || hi.len() != self.dim {
                    return Err(DomainError::BadShape("box bound dimension mismatch".into()));
                }
                if !lo.iter().zip(hi).all(|(a, b)| a < b) {
                    return Err(DomainError::BadShape("box needs lo < hi componentwise".into()));
                }
            }
            ShapeKind::Annulus { r_in, r_out } => {
                if !(*r_in > 0.0 && r_in < r_out) {
                    return Err(DomainError::BadShape("annulus needs 0 < r_in < r_out".into()));
                }
            }
        }
        Ok(())
    }

    /// Strict (open-set) membership of a continuum point.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.boundary_distance(x) > 0.0
    }

    /// Signed distance to the shape boundary: positive inside, negative
    /// outside (exact for balls/annuli; for boxes it is the exact inside
    /// distance and a lower bound outside, which suffices for membership).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ShapeKind::Ball { center, radius } => {
                let r = dist(x, center);
                radius - r
            }
            ShapeKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&c, (&a, &b))| (c - a).min(b - c))
                .fold(f64::INFINITY, f64::min),
            ShapeKind::Annulus { r_in, r_out } => {
                let r = norm(x);
                (r - r_in).min(r_out - r)
            }
        }
    }

    /// Axis-aligned continuum bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            ShapeKind::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            ShapeKind::Box { lo, hi } => (lo.clone(), hi.clone()),
            ShapeKind::Annulus { r_out, .. } => {
                (vec![-r_out; self.dim], vec![*r_out; self.dim])
            }
        }
    }

    /// One-line textual form for dump headers.
    pub fn describe(&self) -> String {
        match &self.kind {
            ShapeKind::Ball { center, radius } => {
                format!("ball center={:?} radius={}", center, radius)
            }
            ShapeKind::Box { lo, hi } => format!("box lo={:?} hi={:?}", lo, hi),
            ShapeKind::Annulus { r_in, r_out } => {
                format!("annulus r_in={} r_out={}", r_in, r_out)
            }
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// The blown-up lattice domain D_N with full adjacency.
///
/// Sites are stored in lexicographic coordinate order (the flat order of the
/// bounding grid), which fixes all downstream indexing byte-for-byte.
#[derive(Debug, Clone)]
pub struct Domain {
    pub shape: ShapeSpec,
    pub n: i64,
    /// Bounding grid (shape bounding box scaled by N, padded by one layer).
    pub grid: GridBox,
    /// Coordinates of every site, sorted lexicographically.
    pub sites: Vec<Vec<i64>>,
    /// Dense grid-cell -> site-index map (-1 when the cell is not a site).
    site_at: Vec<i32>,
    /// CSR adjacency: neighbors of site i are neighbor_idx[neighbor_start[i]..neighbor_start[i+1]].
    pub neighbor_start: Vec<usize>,
    pub neighbor_idx: Vec<u32>,
    /// Number of lattice neighbors outside D_N (killing degree), per site.
    pub out_degree: Vec<u8>,
    /// Outer boundary ∂D_N: points outside D_N adjacent to it, sorted lex.
    pub boundary: Vec<Vec<i64>>,
}

impl Domain {
    pub fn dim(&self) -> usize {
        self.shape.dim
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Site index of a lattice point, if it belongs to D_N.
    #[inline]
    pub fn site_index(&self, p: &[i64]) -> Option<usize> {
        let cell = self.grid.index(p)?;
        let s = self.site_at[cell];
        if s >= 0 {
            Some(s as usize)
        } else {
            None
        }
    }

    /// Neighbor site indices of site `i`.
    #[inline]
    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbor_idx[self.neighbor_start[i]..self.neighbor_start[i + 1]]
    }

    /// Writes the dump format: header `d N kind params`, one site per line.
    pub fn dump<W: IoWrite>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim(), self.n, self.shape.describe())?;
        for s in &self.sites {
            let coords: Vec<String> = s.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", coords.join(" "))?;
        }
        Ok(())
    }
}

/// Builds D_N = (N·D) ∩ Z^d with adjacency and outer boundary; errors on an
/// empty or disconnected site graph.
pub fn build_domain(shape: &ShapeSpec, n: i64) -> Result<Domain, DomainError> {
    shape.validate()?;
    assert!(n >= 1);
    let d = shape.dim;
    let (lo_c, hi_c) = shape.bounding_box();
    let lo: Vec<i64> = lo_c.iter().map(|c| (c * n as f64).floor() as i64 - 1).collect();
    let hi: Vec<i64> = hi_c.iter().map(|c| (c * n as f64).ceil() as i64 + 1).collect();
    let grid = GridBox::new(lo, hi);

    let mut site_at = vec![-1i32; grid.len()];
    let mut sites: Vec<Vec<i64>> = Vec::new();
    let mut xs = vec![0.0f64; d];
    for (cell, p) in grid.iter_points() {
        for k in 0..d {
            xs[k] = p[k] as f64 / n as f64;
        }
        if shape.contains(&xs) {
            site_at[cell] = sites.len() as i32;
            sites.push(p);
        }
    }
    if sites.is_empty() {
        return Err(DomainError::EmptyDomain);
    }

    // adjacency + outer boundary
    let mut neighbor_start = Vec::with_capacity(sites.len() + 1);
    let mut neighbor_idx: Vec<u32> = Vec::new();
    let mut out_degree = vec![0u8; sites.len()];
    let mut boundary_seen: HashMap<u128, Vec<i64>> = HashMap::new();
    neighbor_start.push(0);
    let mut q = vec![0i64; d];
    for (i, s) in sites.iter().enumerate() {
        for axis in 0..d {
            for step in [-1i64, 1] {
                q.copy_from_slice(s);
                q[axis] += step;
                match grid.index(&q).map(|c| site_at[c]) {
                    Some(j) if j >= 0 => neighbor_idx.push(j as u32),
                    _ => {
                        out_degree[i] += 1;
                        boundary_seen.entry(pack_point(&q)).or_insert_with(|| q.clone());
                    }
                }
            }
        }
        neighbor_start.push(neighbor_idx.len());
    }
    let mut boundary: Vec<Vec<i64>> = boundary_seen.into_values().collect();
    boundary.sort();

    // connectivity by breadth-first traversal
    let mut seen = vec![false; sites.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1usize;
    while let Some(i) = stack.pop() {
        let (a, b) = (neighbor_start[i], neighbor_start[i + 1]);
        for &j in &neighbor_idx[a..b] {
            if !seen[j as usize] {
                seen[j as usize] = true;
                count += 1;
                stack.push(j as usize);
            }
        }
    }
    if count != sites.len() {
        // a crude component count for the diagnostic
        let mut components = 1usize;
        for i in 0..sites.len() {
            if !seen[i] {
                components += 1;
                let mut st = vec![i];
                seen[i] = true;
                while let Some(k) = st.pop() {
                    let (a, b) = (neighbor_start[k], neighbor_start[k + 1]);
                    for &j in &neighbor_idx[a..b] {
                        if !seen[j as usize] {
                            seen[j as usize] = true;
                            st.push(j as usize);
                        }
                    }
                }
            }
        }
        return Err(DomainError::Disconnected { components });
    }

    Ok(Domain {
        shape: shape.clone(),
        n,
        grid,
        sites,
        site_at,
        neighbor_start,
        neighbor_idx,
        out_degree,
        boundary,
    })
}

/// Inner target Λ_N ⊆ D_N together with its εN-enlargement Λ_N^ε.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub lambda_shape: ShapeSpec,
    pub eps: f64,
    /// Site indices (into Domain.sites) of Λ_N, increasing.
    pub sites: Vec<usize>,
    /// Site indices of Λ_N^ε = {x ∈ D_N : dist(x, Λ_N) ≤ εN}, increasing.
    pub enlarged: Vec<usize>,
    /// Membership masks over all domain sites.
    pub in_target: Vec<bool>,
    pub in_enlarged: Vec<bool>,
    /// Position of each domain site within `sites` (-1 when not in Λ_N).
    pub target_local: Vec<i32>,
}

/// Builds Λ_N = (N·Λ) ∩ D_N and its enlargement; enforces the continuum
/// separation d(Λ, ∂D) ≥ 2ε before any lattice work.
pub fn build_target(
    domain: &Domain,
    lambda_shape: &ShapeSpec,
    eps: f64,
) -> Result<TargetSet, DomainError> {
    lambda_shape.validate()?;
    assert!(eps >= 0.0);

    let margin = continuum_margin(&domain.shape, lambda_shape);
    if margin < 2.0 * eps {
        return Err(DomainError::MarginViolation { required: 2.0 * eps, found: margin });
    }

    let d = domain.dim();
    let n = domain.n;
    let mut in_target = vec![false; domain.len()];
    let mut xs = vec![0.0f64; d];
    let mut sites = Vec::new();
    for (i, p) in domain.sites.iter().enumerate() {
        for k in 0..d {
            xs[k] = p[k] as f64 / n as f64;
        }
        if lambda_shape.contains(&xs) {
            in_target[i] = true;
            sites.push(i);
        }
    }
    if sites.is_empty() {
        return Err(DomainError::EmptyTarget);
    }

    // enlargement by exact Euclidean distance transform on the bounding grid
    let mut seed = vec![false; domain.grid.len()];
    for &i in &sites {
        seed[domain.grid.index(&domain.sites[i]).unwrap()] = true;
    }
    let dist_sq = distance_sq_transform(&domain.grid, &seed);
    let reach = eps * n as f64;
    let reach_sq = (reach * reach).floor() as usize;
    let mut in_enlarged = vec![false; domain.len()];
    let mut enlarged = Vec::new();
    for (i, p) in domain.sites.iter().enumerate() {
        let cell = domain.grid.index(p).unwrap();
        if dist_sq[cell] <= reach_sq {
            in_enlarged[i] = true;
            enlarged.push(i);
        }
    }

    let mut target_local = vec![-1i32; domain.len()];
    for (k, &i) in sites.iter().enumerate() {
        target_local[i] = k as i32;
    }

    Ok(TargetSet {
        lambda_shape: lambda_shape.clone(),
        eps,
        sites,
        enlarged,
        in_target,
        in_enlarged,
        target_local,
    })
}

/// Continuum distance from Λ (closure) to ∂D, by minimizing the inside
/// distance to ∂D over a fine grid of points of Λ. The grid step adapts to
/// the shape scale; for the concentric ball/box cases used in experiments
/// this is exact to the grid resolution.
fn continuum_margin(outer: &ShapeSpec, inner: &ShapeSpec) -> f64 {
    let d = outer.dim;
    let (lo, hi) = inner.bounding_box();
    let extent = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| b - a)
        .fold(0.0f64, f64::max);
    // ~40 samples per axis in 3-D, more in lower dimension
    let steps = match d {
        1 => 2000,
        2 => 200,
        _ => 40,
    };
    let h = extent / steps as f64;
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0f64; d];
    loop {
        for k in 0..d {
            x[k] = lo[k] + idx[k] as f64 * h;
        }
        if inner.boundary_distance(&x) >= 0.0 {
            let m = outer.boundary_distance(&x);
            if m < best {
                best = m;
            }
        }
        // odometer over the sample grid
        let mut k = 0;
        loop {
            if k == d {
                return if best.is_finite() { best } else { f64::NEG_INFINITY };
            }
            idx[k] += 1;
            if lo[k] + idx[k] as f64 * h <= hi[k] + 1e-12 {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
