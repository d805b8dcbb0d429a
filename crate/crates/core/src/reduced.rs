//! Symmetric systems `<A x, v> = <b, v>` for all `v` in a subspace `V`,
//! with `A = I + sum_i sum_{j in I^i} (K^i_j)^T alpha_j T_j K^i_j` and `V`
//! cut out by per-row constraints on `K^i v`. Shared by the sensitivity
//! solve, the generalized adjoint and the stationarity certificate.

use nalgebra::{DMatrix, DVector};

use crate::active_set::{ActiveSetPartition, SetKind};
use crate::denoise::{apply_hessian, hessian_diag, DenoiseProblem};
use crate::error::{Error, Result};
use crate::grid::{norm2, GradientOperator};
use crate::linalg::{pcg, Clusters};

/// How the reduced system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolve {
    /// Dense factorization for small reduced dimensions, CG otherwise.
    #[default]
    Auto,
    Iterative,
    Direct,
}

const DENSE_AUTO_LIMIT: usize = 512;
const DENSE_HARD_LIMIT: usize = 4096;
const CG_RTOL: f64 = 1e-13;

/// Constraint imposed on row `j` of one operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RowConstraint {
    Free,
    /// `(K v)_j = 0`
    Zero,
    /// `(K v)_j` parallel to the given direction.
    Span([f64; 2]),
}

/// Row constraints implied by a partition: `As` and `B1` rows vanish, `B2`
/// rows follow their dual.
pub(crate) fn partition_constraints(
    partition: &ActiveSetPartition,
    q: &crate::grid::GradientField,
) -> Vec<RowConstraint> {
    (0..partition.len())
        .map(|j| match partition.kind(j) {
            SetKind::StronglyActive => RowConstraint::Zero,
            SetKind::Biactive if partition.in_b2(j) => RowConstraint::Span(q.row(j)),
            SetKind::Biactive => RowConstraint::Zero,
            _ => RowConstraint::Free,
        })
        .collect()
}

/// `alpha_j T_j` with `T_j = (I - n n^T) / ||(K u)_j||` on inactive rows.
pub(crate) fn curvature_blocks(
    problem: &DenoiseProblem,
    u: &[f64],
    partitions: &[ActiveSetPartition],
) -> Vec<Vec<[[f64; 2]; 2]>> {
    problem
        .terms()
        .iter()
        .zip(partitions)
        .map(|(t, p)| {
            (0..t.op().n())
                .map(|j| {
                    if p.kind(j) != SetKind::Inactive {
                        return [[0.0; 2]; 2];
                    }
                    let z = t.op().row(j, u);
                    let nz = norm2(z);
                    assert!(nz > 0.0, "inactive row {j} with zero gradient");
                    let (nx, ny) = (z[0] / nz, z[1] / nz);
                    let s = t.alpha()[j] / nz;
                    [[s * (1.0 - nx * nx), -s * nx * ny], [-s * nx * ny, s * (1.0 - ny * ny)]]
                })
                .collect()
        })
        .collect()
}

pub(crate) struct ReducedSystem<'a> {
    problem: &'a DenoiseProblem,
    blocks: Vec<Vec<[[f64; 2]; 2]>>,
    clusters: Clusters,
    /// Orthonormal null-space basis of the span constraints in cluster
    /// coordinates, present only when some row carries a span constraint.
    basis: Option<DMatrix<f64>>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(
        problem: &'a DenoiseProblem,
        blocks: Vec<Vec<[[f64; 2]; 2]>>,
        constraints: &[Vec<RowConstraint>],
    ) -> Result<Self> {
        let ops = problem.ops();
        let zero: Vec<Vec<bool>> = constraints
            .iter()
            .map(|c| c.iter().map(|r| *r == RowConstraint::Zero).collect())
            .collect();
        let clusters = Clusters::from_zero_rows(&ops, &zero);
        let span_rows: Vec<(usize, usize, [f64; 2])> = constraints
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                c.iter().enumerate().filter_map(move |(j, r)| match r {
                    RowConstraint::Span(d) => Some((i, j, *d)),
                    _ => None,
                })
            })
            .collect();
        let basis = if span_rows.is_empty() {
            None
        } else {
            Some(span_null_space(&ops, &clusters, &span_rows)?)
        };
        Ok(Self {
            problem,
            blocks,
            clusters,
            basis,
        })
    }

    /// Dimension of `V`.
    pub fn dim(&self) -> usize {
        match &self.basis {
            Some(z) => z.ncols(),
            None => self.clusters.count(),
        }
    }

    /// `A v` on the full pixel space.
    pub fn apply_full(&self, v: &[f64], out: &mut [f64]) {
        apply_hessian(self.problem, &self.blocks, v, out);
    }

    fn apply_clusters(&self, c: &[f64], out: &mut [f64], full_in: &mut Vec<f64>, full_out: &mut [f64]) {
        *full_in = self.clusters.lift(c);
        self.apply_full(full_in, full_out);
        self.clusters.restrict_into(full_out, out);
    }

    fn dense_cluster_matrix(&self) -> DMatrix<f64> {
        let nc = self.clusters.count();
        let n = self.problem.n();
        let mut m = DMatrix::zeros(nc, nc);
        let mut e = vec![0.0; nc];
        let mut col = vec![0.0; nc];
        let mut fi = vec![0.0; n];
        let mut fo = vec![0.0; n];
        for k in 0..nc {
            e[k] = 1.0;
            self.apply_clusters(&e, &mut col, &mut fi, &mut fo);
            e[k] = 0.0;
            m.set_column(k, &DVector::from_column_slice(&col));
        }
        m
    }

    /// Solves `<A x, v> = <b, v>` for all `v` in `V` with `x` in `V`; returns
    /// `x` on the full pixel grid.
    pub fn solve(&self, b: &[f64], method: LinearSolve) -> Result<Vec<f64>> {
        let rhs = self.clusters.restrict(b);
        if let Some(z) = &self.basis {
            if z.ncols() == 0 {
                return Ok(vec![0.0; self.problem.n()]);
            }
            let a = self.dense_cluster_matrix();
            let m = z.transpose() * &a * z;
            let r = z.transpose() * DVector::from_column_slice(&rhs);
            let y = dense_spd_solve(m, r)?;
            let c = z * y;
            return Ok(self.clusters.lift(c.as_slice()));
        }
        let nc = self.clusters.count();
        let direct = match method {
            LinearSolve::Direct => true,
            LinearSolve::Iterative => false,
            LinearSolve::Auto => nc <= DENSE_AUTO_LIMIT,
        };
        if direct {
            if nc > DENSE_HARD_LIMIT {
                return Err(Error::InvalidParam(format!(
                    "dense reduced solve requested for dimension {nc} (limit {DENSE_HARD_LIMIT})"
                )));
            }
            let c = dense_spd_solve(self.dense_cluster_matrix(), DVector::from_column_slice(&rhs))?;
            return Ok(self.clusters.lift(c.as_slice()));
        }
        let n = self.problem.n();
        let full_diag = hessian_diag(self.problem, &self.blocks);
        let diag = self.clusters.restrict(&full_diag);
        let mut fi = vec![0.0; n];
        let mut fo = vec![0.0; n];
        let mut c = vec![0.0; nc];
        let outcome = pcg(
            |x, out| self.apply_clusters(x, out, &mut fi, &mut fo),
            Some(&diag),
            &rhs,
            &mut c,
            CG_RTOL,
            0.0,
            (20 * nc).max(2000),
        );
        if !outcome.converged {
            let rel = outcome.residual / crate::linalg::norm(&rhs).max(f64::MIN_POSITIVE);
            if rel > 1e-8 || outcome.breakdown {
                return Err(Error::SingularSystem(format!(
                    "reduced CG stopped after {} iterations at relative residual {rel:.3e}",
                    outcome.iterations
                )));
            }
            log::debug!("reduced CG accepted at relative residual {rel:.3e}");
        }
        Ok(self.clusters.lift(&c))
    }
}

fn dense_spd_solve(m: DMatrix<f64>, r: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&r));
    }
    m.lu()
        .solve(&r)
        .ok_or_else(|| Error::SingularSystem("reduced matrix is singular".into()))
}

/// Null space of `{c : <d_perp, (K P c)_j> = 0}` over all span rows.
fn span_null_space(
    ops: &[&GradientOperator],
    clusters: &Clusters,
    rows: &[(usize, usize, [f64; 2])],
) -> Result<DMatrix<f64>> {
    let nc = clusters.count();
    if nc > DENSE_HARD_LIMIT {
        return Err(Error::InvalidParam(format!(
            "span constraints need a dense basis; {nc} clusters exceed {DENSE_HARD_LIMIT}"
        )));
    }
    let nr = rows.len().max(nc);
    let mut c = DMatrix::zeros(nr, nc);
    for (r, &(i, j, d)) in rows.iter().enumerate() {
        let nd = norm2(d);
        if nd == 0.0 {
            return Err(Error::AssumptionViolated(format!("span constraint on row {j} with zero direction")));
        }
        let w = [-d[1] / nd, d[0] / nd];
        for (k, diff) in ops[i].stencil(j).iter().enumerate() {
            if let Some(diff) = diff {
                c[(r, clusters.label(diff.plus as usize))] += w[k] * diff.weight;
                c[(r, clusters.label(diff.minus as usize))] -= w[k] * diff.weight;
            }
        }
    }
    let svd = c.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cut = 1e-10 * smax.max(1.0);
    let mut null_rows = Vec::new();
    for k in 0..vt.nrows() {
        let s = if k < svd.singular_values.len() { svd.singular_values[k] } else { 0.0 };
        if s <= cut {
            null_rows.push(k);
        }
    }
    let mut z = DMatrix::zeros(nc, null_rows.len());
    for (col, &k) in null_rows.iter().enumerate() {
        for i in 0..nc {
            z[(i, col)] = vt[(k, i)];
        }
    }
    Ok(z)
}
