//! Image grids, gradient fields and the discrete gradient operators.
//!
//! Images are stored row-major: pixel `(r, c)` lives at index `r * m2 + c`.
//! The `x` component of a gradient row differentiates along columns and the
//! `y` component along rows. Every operator produces exactly one gradient row
//! per pixel; rows whose stencil would leave the grid are identically zero
//! (Neumann-zero boundary), so constants are always in the kernel.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};

/// A `m1 x m2` scalar field flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    m1: usize,
    m2: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(m1: usize, m2: usize, data: Vec<f64>) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::Shape(format!("empty grid {m1}x{m2}")));
        }
        if data.len() != m1 * m2 {
            return Err(Error::Shape(format!(
                "grid {m1}x{m2} needs {} values, got {}",
                m1 * m2,
                data.len()
            )));
        }
        Ok(Self { m1, m2, data })
    }

    pub fn zeros(m1: usize, m2: usize) -> Self {
        Self::filled(m1, m2, 0.0)
    }

    pub fn filled(m1: usize, m2: usize, value: f64) -> Self {
        assert!(m1 > 0 && m2 > 0, "empty grid");
        Self {
            m1,
            m2,
            data: vec![value; m1 * m2],
        }
    }

    pub fn from_fn(m1: usize, m2: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(m1 > 0 && m2 > 0, "empty grid");
        let mut data = Vec::with_capacity(m1 * m2);
        for r in 0..m1 {
            for c in 0..m2 {
                data.push(f(r, c));
            }
        }
        Self { m1, m2, data }
    }

    pub fn rows(&self) -> usize {
        self.m1
    }

    pub fn cols(&self) -> usize {
        self.m2
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.m2 + c]
    }

    /// Same shape, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.m1, self.m2, data)
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.shape() == other.shape()
    }
}

/// `n` rows of 2-vectors, one per pixel. Holds `Ku`, duals `q` and the
/// multipliers living on gradient rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    rows: Vec<[f64; 2]>,
}

impl GradientField {
    pub fn zeros(n: usize) -> Self {
        Self {
            rows: vec![[0.0; 2]; n],
        }
    }

    pub fn from_rows(rows: Vec<[f64; 2]>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.rows
    }

    pub fn row(&self, j: usize) -> [f64; 2] {
        self.rows[j]
    }

    pub fn row_norm(&self, j: usize) -> f64 {
        norm2(self.rows[j])
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for r in &mut self.rows {
            r[0] *= s;
            r[1] *= s;
        }
    }
}

#[inline]
pub fn norm2(z: [f64; 2]) -> f64 {
    z[0].hypot(z[1])
}

#[inline]
pub fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Finite-difference stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Forward,
    Backward,
    Centered,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Forward, Scheme::Backward, Scheme::Centered];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Forward => "forward",
            Scheme::Backward => "backward",
            Scheme::Centered => "centered",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forward" | "fwd" => Ok(Scheme::Forward),
            "backward" | "bwd" => Ok(Scheme::Backward),
            "centered" | "centred" | "central" => Ok(Scheme::Centered),
            other => Err(Error::InvalidParam(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    NeumannZero,
}

/// One component of a gradient row: `weight * (u[plus] - u[minus])`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Difference {
    pub plus: u32,
    pub minus: u32,
    pub weight: f64,
}

/// Sparse `2m x m` matrix stacking `K_x` and `K_y`; each row is either zero
/// or a single weighted difference of two pixels.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    scheme: Scheme,
    boundary: Boundary,
    m1: usize,
    m2: usize,
    // per component: plus index, minus index and weight (zero rows point at
    // their own pixel with weight 0)
    plus: [Vec<u32>; 2],
    minus: [Vec<u32>; 2],
    weight: [Vec<f64>; 2],
    // per component: index offsets of the plus and minus pixels, shared by
    // every nonzero row
    offsets: [(isize, isize); 2],
}

impl GradientOperator {
    pub fn new(m1: usize, m2: usize, scheme: Scheme) -> Self {
        assert!(m1 > 0 && m2 > 0, "empty grid");
        let n = m1 * m2;
        let idx = |r: usize, c: usize| (r * m2 + c) as u32;
        let mut plus = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut minus = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut weight = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for r in 0..m1 {
            for c in 0..m2 {
                let me = idx(r, c);
                let (x, y) = match scheme {
                    Scheme::Forward => (
                        (c + 1 < m2).then(|| (idx(r, c + 1), me, 1.0)),
                        (r + 1 < m1).then(|| (idx(r + 1, c), me, 1.0)),
                    ),
                    Scheme::Backward => (
                        (c >= 1).then(|| (me, idx(r, c - 1), 1.0)),
                        (r >= 1).then(|| (me, idx(r - 1, c), 1.0)),
                    ),
                    Scheme::Centered => (
                        (c >= 1 && c + 1 < m2).then(|| (idx(r, c + 1), idx(r, c - 1), 0.5)),
                        (r >= 1 && r + 1 < m1).then(|| (idx(r + 1, c), idx(r - 1, c), 0.5)),
                    ),
                };
                for (k, d) in [x, y].into_iter().enumerate() {
                    let (p, m, w) = d.unwrap_or((me, me, 0.0));
                    plus[k].push(p);
                    minus[k].push(m);
                    weight[k].push(w);
                }
            }
        }
        let w = m2 as isize;
        let offsets = match scheme {
            Scheme::Forward => [(1, 0), (w, 0)],
            Scheme::Backward => [(0, -1), (0, -w)],
            Scheme::Centered => [(1, -1), (w, -w)],
        };
        Self {
            scheme,
            boundary: Boundary::NeumannZero,
            m1,
            m2,
            plus,
            minus,
            weight,
            offsets,
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    /// Number of gradient rows (equals the pixel count).
    pub fn n(&self) -> usize {
        self.weight[0].len()
    }

    /// The two component differences of row `j`; `None` marks a zero
    /// component.
    pub fn stencil(&self, j: usize) -> [Option<Difference>; 2] {
        [0, 1].map(|k| {
            (self.weight[k][j] != 0.0).then(|| Difference {
                plus: self.plus[k][j],
                minus: self.minus[k][j],
                weight: self.weight[k][j],
            })
        })
    }

    /// True if row `j` vanishes for every input.
    pub fn is_zero_row(&self, j: usize) -> bool {
        self.weight[0][j] == 0.0 && self.weight[1][j] == 0.0
    }

    fn check_len(&self, len: usize, what: &str) -> Result<()> {
        if len != self.n() {
            return Err(Error::Shape(format!(
                "{what} has length {len}, operator expects {}",
                self.n()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, u: &ImageGrid) -> Result<GradientField> {
        if u.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "image {:?} vs operator {:?}",
                u.shape(),
                self.shape()
            )));
        }
        Ok(self.apply_slice(u.data()))
    }

    pub fn apply_slice(&self, u: &[f64]) -> GradientField {
        let mut out = GradientField::zeros(self.n());
        self.apply_into(u, out.rows_mut());
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [[f64; 2]]) {
        let n = self.n();
        assert!(u.len() == n && out.len() == n, "apply_into: length mismatch");
        for k in 0..2 {
            let (p, m) = self.offsets[k];
            let w = &self.weight[k];
            // rows whose stencil leaves the index range are zero rows
            let lo = (-p.min(m)).max(0) as usize;
            let hi = (n as isize - p.max(m).max(0)).max(lo as isize) as usize;
            for o in &mut out[..lo] {
                o[k] = 0.0;
            }
            for o in &mut out[hi..] {
                o[k] = 0.0;
            }
            if hi == lo {
                continue;
            }
            let up = &u[(lo as isize + p) as usize..];
            let um = &u[(lo as isize + m) as usize..];
            for (i, o) in out[lo..hi].iter_mut().enumerate() {
                o[k] = w[lo + i] * (up[i] - um[i]);
            }
        }
    }

    /// `(K u)_j` for a single row.
    #[inline]
    pub fn row(&self, j: usize, u: &[f64]) -> [f64; 2] {
        [0, 1].map(|k| self.weight[k][j] * (u[self.plus[k][j] as usize] - u[self.minus[k][j] as usize]))
    }

    pub fn apply_transpose(&self, q: &GradientField) -> Result<Vec<f64>> {
        self.check_len(q.len(), "gradient field")?;
        let mut out = vec![0.0; self.n()];
        self.apply_transpose_add(q.rows(), 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * K^T q`.
    pub fn apply_transpose_add(&self, q: &[[f64; 2]], scale: f64, out: &mut [f64]) {
        let n = self.n();
        assert!(q.len() == n && out.len() == n, "apply_transpose_add: length mismatch");
        let n = n as isize;
        for k in 0..2 {
            let (p, m) = self.offsets[k];
            let w = &self.weight[k];
            // pixel i receives +w q from row i - p and -w q from row i - m
            let term = |j: isize| if (0..n).contains(&j) { w[j as usize] * q[j as usize][k] } else { 0.0 };
            let lo = p.max(m).clamp(0, n);
            let hi = (n + p.min(m)).clamp(lo, n);
            for i in (0..lo).chain(hi..n) {
                out[i as usize] += scale * (term(i - p) - term(i - m));
            }
            if hi == lo {
                continue;
            }
            let (lo, hi) = (lo as usize, hi as usize);
            let (dp, dm) = ((lo as isize - p) as usize, (lo as isize - m) as usize);
            let (wp, wm) = (&w[dp..], &w[dm..]);
            let (qp, qm) = (&q[dp..], &q[dm..]);
            for (i, o) in out[lo..hi].iter_mut().enumerate() {
                *o += scale * (wp[i] * qp[i][k] - wm[i] * qm[i][k]);
            }
        }
    }

    /// `out += scale * K_j^T z` for a single row.
    #[inline]
    pub fn add_row_transpose_at(&self, j: usize, z: [f64; 2], scale: f64, out: &mut [f64]) {
        for k in 0..2 {
            let v = scale * self.weight[k][j] * z[k];
            out[self.plus[k][j] as usize] += v;
            out[self.minus[k][j] as usize] -= v;
        }
    }

    /// Gershgorin bound on `||K||^2` (max absolute row sum of `K^T K`).
    pub fn gram_row_sum_bound(&self) -> f64 {
        let mut sums = vec![0.0; self.n()];
        self.accumulate_gram_row_sums(&mut sums);
        sums.into_iter().fold(0.0, f64::max)
    }

    /// Adds `sum_k |(K^T K)_{ik}|` upper bounds for every column `i`.
    pub(crate) fn accumulate_gram_row_sums(&self, sums: &mut [f64]) {
        // each difference row contributes w^2 * (|+1| + |-1|) to both pixels it touches
        for k in 0..2 {
            for j in 0..self.n() {
                let w2 = 2.0 * self.weight[k][j] * self.weight[k][j];
                sums[self.plus[k][j] as usize] += w2;
                sums[self.minus[k][j] as usize] += w2;
            }
        }
    }

    /// Power-method estimate of `||K||_2`.
    pub fn norm_estimate(&self, iters: usize) -> f64 {
        power_norm(&[self], iters)
    }

    /// Dense `2n x n` matrix, `K_x` rows first. Intended for small test grids.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut mat = vec![vec![0.0; n]; 2 * n];
        for j in 0..n {
            for (c, d) in self.stencil(j).iter().enumerate() {
                if let Some(d) = d {
                    mat[c * n + j][d.plus as usize] += d.weight;
                    mat[c * n + j][d.minus as usize] -= d.weight;
                }
            }
        }
        mat
    }
}

/// Power iteration on `sum_i K_i^T K_i`; returns the estimated norm of the
/// stacked operator. The start vector is a fixed pseudo-random pattern.
pub fn power_norm(ops: &[&GradientOperator], iters: usize) -> f64 {
    let Some(first) = ops.first() else {
        return 0.0;
    };
    let n = first.n();
    let mut rng = SplitMix64::seed_from_u64(0x9E37_79B9_7F4A_7C15);
    let mut x: Vec<f64> = (0..n)
        .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        .collect();
    let mut field = vec![[0.0; 2]; n];
    let mut estimate = 0.0f64;
    for _ in 0..iters.max(1) {
        let xn = crate::linalg::norm(&x);
        if xn == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= xn);
        let mut y = vec![0.0; n];
        let mut kx2 = 0.0;
        for op in ops {
            op.apply_into(&x, &mut field);
            kx2 += field.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>();
            op.apply_transpose_add(&field, 1.0, &mut y);
        }
        estimate = estimate.max(kx2.sqrt());
        x = y;
    }
    estimate
}
