//! Small dense-vector kernels, a preconditioned conjugate gradient solver and
//! the pixel clustering used to parameterize `{v : (Kv)_j = 0, j in Z}`.

use crate::grid::GradientOperator;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Set when a direction with nonpositive curvature was met.
    pub breakdown: bool,
}

/// Jacobi-preconditioned conjugate gradients for `A x = b` with `A`
/// symmetric positive definite. `x` holds the initial guess on entry.
/// Stops when `||r|| <= rtol * ||b|| + atol`.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    diag: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    atol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let target = rtol * norm(b) + atol;
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = if d[i] > 0.0 { r[i] / d[i] } else { r[i] };
            }
        }
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rnorm = norm(&r);
    let mut it = 0;
    while rnorm > target && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return CgOutcome {
                iterations: it,
                residual: rnorm,
                converged: false,
                breakdown: true,
            };
        }
        let a = rz / pap;
        axpy(a, &p, x);
        axpy(-a, &ap, &mut r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rnorm = norm(&r);
        it += 1;
    }
    CgOutcome {
        iterations: it,
        residual: rnorm,
        converged: rnorm <= target,
        breakdown: false,
    }
}

/// CGLS for the least-squares problem `min ||A x - b||` started from `x = 0`,
/// which converges to the minimum-norm solution when `b` is in the range.
pub fn cgls(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut apply_t: impl FnMut(&[f64], &mut [f64]),
    n_cols: usize,
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let mut x = vec![0.0; n_cols];
    let mut r = b.to_vec();
    let mut s = vec![0.0; n_cols];
    apply_t(&r, &mut s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    let mut q = vec![0.0; b.len()];
    for _ in 0..max_iter {
        if norm(&r) <= tol || gamma == 0.0 {
            break;
        }
        apply(&p, &mut q);
        let qq = dot(&q, &q);
        if qq == 0.0 {
            break;
        }
        let a = gamma / qq;
        axpy(a, &p, &mut x);
        axpy(-a, &q, &mut r);
        apply_t(&r, &mut s);
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for i in 0..n_cols {
            p[i] = s[i] + beta * p[i];
        }
    }
    x
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = self.parent[x as usize];
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        true
    }
}

/// Piecewise-constant parameterization `v = P c` where `P` is the 0/1
/// indicator matrix of pixel clusters.
#[derive(Debug, Clone)]
pub struct Clusters {
    label: Vec<u32>,
    sizes: Vec<f64>,
}

impl Clusters {
    pub fn singletons(n: usize) -> Self {
        Self {
            label: (0..n as u32).collect(),
            sizes: vec![1.0; n],
        }
    }

    /// Clusters induced by requiring `(K v)_j = 0` for every selected row of
    /// every operator. `zero_rows[i][j]` selects row `j` of operator `i`.
    pub fn from_zero_rows(ops: &[&GradientOperator], zero_rows: &[Vec<bool>]) -> Self {
        let n = ops[0].n();
        let mut ds = DisjointSet::new(n);
        for (op, rows) in ops.iter().zip(zero_rows) {
            for (j, &z) in rows.iter().enumerate() {
                if z {
                    for d in op.stencil(j).iter().flatten() {
                        ds.union(d.plus, d.minus);
                    }
                }
            }
        }
        let mut root_label = vec![u32::MAX; n];
        let mut label = vec![0u32; n];
        let mut sizes = Vec::new();
        for i in 0..n {
            let r = ds.find(i as u32) as usize;
            if root_label[r] == u32::MAX {
                root_label[r] = sizes.len() as u32;
                sizes.push(0.0);
            }
            label[i] = root_label[r];
            sizes[label[i] as usize] += 1.0;
        }
        Self { label, sizes }
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn pixels(&self) -> usize {
        self.label.len()
    }

    pub fn label(&self, pixel: usize) -> usize {
        self.label[pixel] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.label
    }

    /// Diagonal of `P^T P`.
    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn same(&self, a: u32, b: u32) -> bool {
        self.label[a as usize] == self.label[b as usize]
    }

    /// `P c`
    pub fn lift(&self, c: &[f64]) -> Vec<f64> {
        self.label.iter().map(|&l| c[l as usize]).collect()
    }

    /// `P^T v`
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.count()];
        self.restrict_into(v, &mut out);
        out
    }

    pub fn restrict_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&l, vi) in self.label.iter().zip(v) {
            out[l as usize] += vi;
        }
    }

    /// Cluster means of `v` (the orthogonal projection onto `range(P)`,
    /// expressed in cluster coordinates).
    pub fn average(&self, v: &[f64]) -> Vec<f64> {
        let mut c = self.restrict(v);
        for (ci, s) in c.iter_mut().zip(&self.sizes) {
            *ci /= s;
        }
        c
    }
}
