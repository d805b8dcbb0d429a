//! The lower-level TV denoising problem
//! `min_u 1/2 ||u - f||^2 + sum_i sum_j alpha^i_j ||(K^i u)_j||`
//! and its primal-dual optimality residuals.

mod huber;
mod pdhg;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{dot2, norm2, GradientField, GradientOperator, ImageGrid};
use crate::param::ParamField;

pub(crate) use huber::{apply_hessian, hessian_diag};
pub use huber::{huber_grad, huber_hess, huber_norm, solve_tv_huber, HuberParams, HuberSolver};

/// One `alpha_j ||(K u)_j||` term of the energy.
#[derive(Debug, Clone)]
pub struct TvTerm {
    op: Arc<GradientOperator>,
    param: ParamField,
    alpha: Vec<f64>,
}

impl TvTerm {
    pub fn new(op: Arc<GradientOperator>, param: ParamField) -> Result<Self> {
        if op.shape() != param.shape() {
            return Err(Error::Shape(format!(
                "operator {:?} vs parameter field {:?}",
                op.shape(),
                param.shape()
            )));
        }
        let alpha = param.lift();
        Ok(Self { op, param, alpha })
    }

    pub fn op(&self) -> &GradientOperator {
        &self.op
    }

    pub fn op_arc(&self) -> &Arc<GradientOperator> {
        &self.op
    }

    pub fn param(&self) -> &ParamField {
        &self.param
    }

    /// Lifted per-row parameter values.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

/// Data `f` plus one or more TV terms with quadratic fidelity.
#[derive(Debug, Clone)]
pub struct DenoiseProblem {
    f: ImageGrid,
    terms: Vec<TvTerm>,
}

impl DenoiseProblem {
    pub fn new(f: ImageGrid, terms: Vec<TvTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidParam("denoising problem without terms".into()));
        }
        for t in &terms {
            if t.op.shape() != f.shape() {
                return Err(Error::Shape(format!(
                    "operator {:?} vs data {:?}",
                    t.op.shape(),
                    f.shape()
                )));
            }
        }
        Ok(Self { f, terms })
    }

    /// Single-operator problem.
    pub fn single(f: ImageGrid, op: Arc<GradientOperator>, param: ParamField) -> Result<Self> {
        Self::new(f, vec![TvTerm::new(op, param)?])
    }

    pub fn f(&self) -> &ImageGrid {
        &self.f
    }

    pub fn terms(&self) -> &[TvTerm] {
        &self.terms
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn ops(&self) -> Vec<&GradientOperator> {
        self.terms.iter().map(|t| t.op()).collect()
    }

    /// Same operators and data, new parameter fields.
    pub fn with_params(&self, params: Vec<ParamField>) -> Result<Self> {
        if params.len() != self.terms.len() {
            return Err(Error::Shape(format!(
                "{} parameter fields for {} terms",
                params.len(),
                self.terms.len()
            )));
        }
        let terms = self
            .terms
            .iter()
            .zip(params)
            .map(|(t, p)| TvTerm::new(t.op.clone(), p))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.f.clone(), terms)
    }

    /// `1/2 ||u - f||^2 + sum alpha ||K u||`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let fid: f64 = u
            .iter()
            .zip(self.f.data())
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum();
        fid + self.tv(u)
    }

    pub fn tv(&self, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            for (j, &a) in t.alpha.iter().enumerate() {
                if a > 0.0 {
                    total += a * norm2(t.op.row(j, u));
                }
            }
        }
        total
    }

    /// `u - f + sum_i (K^i)^T q^i`
    pub fn stationarity_vector(&self, u: &[f64], duals: &[GradientField]) -> Vec<f64> {
        let mut r: Vec<f64> = u.iter().zip(self.f.data()).map(|(a, b)| a - b).collect();
        for (t, q) in self.terms.iter().zip(duals) {
            t.op.apply_transpose_add(q.rows(), 1.0, &mut r);
        }
        r
    }

    /// Upper bound on the squared norm of the stacked operator.
    pub fn stacked_norm_sq_bound(&self) -> f64 {
        let mut sums = vec![0.0; self.n()];
        for t in &self.terms {
            t.op.accumulate_gram_row_sums(&mut sums);
        }
        sums.into_iter().fold(0.0, f64::max)
    }
}

/// Sup-norm residuals of the primal-dual optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// `||u - f + sum K^T q||_inf`
    pub stationarity: f64,
    /// `max_j |<q_j, (K u)_j> - alpha_j ||(K u)_j|||`
    pub complementarity: f64,
    /// `max_j max(||q_j|| - alpha_j, 0)`
    pub dual_feasibility: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.dual_feasibility)
    }

    pub fn within(&self, tol: f64, tol_dual: f64) -> bool {
        self.stationarity <= tol && self.complementarity <= tol && self.dual_feasibility <= tol_dual
    }
}

impl fmt::Display for Residuals {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stationarity {:.3e}, complementarity {:.3e}, dual feasibility {:.3e}",
            self.stationarity, self.complementarity, self.dual_feasibility
        )
    }
}

#[derive(Debug, Clone)]
pub struct DenoiseSolution {
    pub u: ImageGrid,
    pub duals: Vec<GradientField>,
    pub residuals: Residuals,
    pub iterations: usize,
    /// Primal to dual step ratio at exit, reused by warm starts.
    pub step_ratio: f64,
}

/// Recomputes the residual triple from scratch.
pub fn primal_dual_residual(problem: &DenoiseProblem, u: &[f64], duals: &[GradientField]) -> Residuals {
    let stationarity = crate::linalg::norm_inf(&problem.stationarity_vector(u, duals));
    let mut complementarity = 0.0f64;
    let mut dual_feasibility = 0.0f64;
    for (t, q) in problem.terms.iter().zip(duals) {
        for (j, &a) in t.alpha.iter().enumerate() {
            let z = t.op.row(j, u);
            let qj = q.row(j);
            complementarity = complementarity.max((dot2(qj, z) - a * norm2(z)).abs());
            dual_feasibility = dual_feasibility.max(norm2(qj) - a);
        }
    }
    Residuals {
        stationarity,
        complementarity,
        dual_feasibility: dual_feasibility.max(0.0),
    }
}

impl DenoiseSolution {
    pub fn recompute_residuals(&self, problem: &DenoiseProblem) -> Residuals {
        primal_dual_residual(problem, self.u.data(), &self.duals)
    }
}

/// Configuration of the exact TV solver.
#[derive(Debug, Clone)]
pub struct TvSolver {
    /// Bound on stationarity and complementarity residuals.
    pub tol: f64,
    /// Bound on dual infeasibility.
    pub tol_dual: f64,
    pub max_iter: usize,
    /// Rebalance the primal and dual step sizes during the iteration.
    pub adaptive_steps: bool,
    /// Target ratio of primal to dual iterate residuals.
    pub step_balance: f64,
}

impl Default for TvSolver {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            tol_dual: 1e-10,
            max_iter: 200_000,
            adaptive_steps: true,
            step_balance: 10.0,
        }
    }
}

impl TvSolver {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            tol_dual: tol.min(1e-10),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.tol_dual > 0.0) {
            return Err(Error::InvalidParam("solver tolerances must be positive".into()));
        }
        if !(self.step_balance > 0.0) || !self.step_balance.is_finite() {
            return Err(Error::InvalidParam("step balance must be positive".into()));
        }
        Ok(())
    }

    pub fn solve(&self, problem: &DenoiseProblem, warm: Option<&DenoiseSolution>) -> Result<DenoiseSolution> {
        self.validate()?;
        pdhg::solve(self, problem, warm)
    }
}

/// Solves the exact TV problem until every residual is at most `tol`.
pub fn solve_tv(problem: &DenoiseProblem, tol: f64, max_iter: usize) -> Result<DenoiseSolution> {
    TvSolver {
        max_iter,
        ..TvSolver::with_tol(tol)
    }
    .solve(problem, None)
}
