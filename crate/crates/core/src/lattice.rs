//! Low-level lattice helpers: packed point keys, dense axis-aligned grids and
//! an exact squared Euclidean distance transform.
//!
//! Points of Z^d are represented as `&[i64]` slices. For hashing we pack each
//! coordinate (offset by 2^15) into 16 bits of a `u128`, which supports
//! dimensions up to 8 and coordinates in [-32768, 32767] — far beyond any
//! blow-up scale used here.

/// Packs a lattice point into a single `u128` key (d <= 8, |coordinate| < 2^15).
#[inline]
pub fn pack_point(p: &[i64]) -> u128 {
    debug_assert!(p.len() <= 8);
    let mut key: u128 = 0;
    for (k, &c) in p.iter().enumerate() {
        debug_assert!((-32768..32768).contains(&c));
        key |= (((c + 32768) as u128) & 0xffff) << (16 * k);
    }
    key
}

/// Squared Euclidean norm of an integer point.
#[inline]
pub fn norm_sq(p: &[i64]) -> i64 {
    p.iter().map(|&c| c * c).sum()
}

/// Squared Euclidean distance between two integer points.
#[inline]
pub fn dist_sq(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// A dense axis-aligned box `[lo, hi]` (inclusive) of lattice points with
/// row-major flat indexing, last axis fastest.
#[derive(Debug, Clone)]
pub struct GridBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    dims: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl GridBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a <= b));
        let dims: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (b - a + 1) as usize)
            .collect();
        let d = dims.len();
        let mut strides = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let len = strides[0] * dims[0];
        GridBox { lo, hi, dims, strides, len }
    }

    /// Centered cube of half-width `half` around `center`.
    pub fn cube(center: &[i64], half: i64) -> Self {
        let lo = center.iter().map(|c| c - half).collect();
        let hi = center.iter().map(|c| c + half).collect();
        GridBox::new(lo, hi)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    #[inline]
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    #[inline]
    pub fn contains(&self, p: &[i64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&c, (&a, &b))| a <= c && c <= b)
    }

    /// Flat index of `p`, or `None` when outside the box.
    #[inline]
    pub fn index(&self, p: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for k in 0..p.len() {
            let off = p[k] - self.lo[k];
            if off < 0 || off as usize >= self.dims[k] {
                return None;
            }
            idx += off as usize * self.strides[k];
        }
        Some(idx)
    }

    /// Coordinates of flat index `idx`.
    pub fn point(&self, mut idx: usize, out: &mut [i64]) {
        for k in 0..self.dims.len() {
            out[k] = self.lo[k] + (idx / self.strides[k]) as i64;
            idx %= self.strides[k];
        }
    }

    /// Iterates all points of the box in flat order.
    pub fn iter_points(&self) -> GridPointIter<'_> {
        GridPointIter { grid: self, cur: self.lo.clone(), next_idx: 0 }
    }
}

pub struct GridPointIter<'a> {
    grid: &'a GridBox,
    cur: Vec<i64>,
    next_idx: usize,
}

impl<'a> Iterator for GridPointIter<'a> {
    type Item = (usize, Vec<i64>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_idx >= self.grid.len {
            return None;
        }
        let item = (self.next_idx, self.cur.clone());
        self.next_idx += 1;
        // odometer increment, last axis fastest
        for k in (0..self.cur.len()).rev() {
            self.cur[k] += 1;
            if self.cur[k] <= self.grid.hi[k] {
                break;
            }
            self.cur[k] = self.grid.lo[k];
        }
        Some(item)
    }
}

/// Exact squared Euclidean distance transform on a `GridBox`.
///
/// `seed[i] == true` marks sources; the result holds, for every cell, the
/// squared lattice distance to the nearest source (usize::MAX when there is
/// none). Felzenszwalb-Huttenlocher lower-envelope passes, one per axis.
pub fn distance_sq_transform(grid: &GridBox, seed: &[bool]) -> Vec<usize> {
    const INF: f64 = 1e18;
    let mut f: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { INF }).collect();
    let d = grid.dim();
    let mut g = vec![0.0f64; f.len()];

    for axis in 0..d {
        let n = grid.dims[axis];
        let stride = grid.strides[axis];
        // number of independent 1-D lines along this axis
        let lines = f.len() / n;
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut line = vec![0.0f64; n];
        for l in 0..lines {
            // base flat index of this line
            let outer = l / stride;
            let inner = l % stride;
            let base = outer * stride * n + inner;
            for q in 0..n {
                line[q] = f[base + q * stride];
            }
            // 1-D squared-distance lower envelope
            let mut k = 0usize;
            v[0] = 0;
            z[0] = -INF;
            z[1] = INF;
            for q in 1..n {
                if line[q] >= INF && line[v[k]] >= INF {
                    continue;
                }
                loop {
                    let s = ((line[q] + (q * q) as f64) - (line[v[k]] + (v[k] * v[k]) as f64))
                        / (2.0 * (q as f64 - v[k] as f64));
                    if s <= z[k] {
                        k -= 1;
                    } else {
                        k += 1;
                        v[k] = q;
                        z[k] = s;
                        z[k + 1] = INF;
                        break;
                    }
                }
            }
            let mut k = 0usize;
            for q in 0..n {
                while z[k + 1] < q as f64 {
                    k += 1;
                }
                let dq = q as f64 - v[k] as f64;
                g[base + q * stride] = dq * dq + line[v[k]];
            }
        }
        f.copy_from_slice(&g);
    }

    f.iter()
        .map(|&x| if x >= INF { usize::MAX } else { x.round() as usize })
        .collect()
}
