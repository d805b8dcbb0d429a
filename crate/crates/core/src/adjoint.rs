//! Reduced cost `j(alpha) = sum_i 1/2 ||u_i(alpha) - ubar_i||^2` over a
//! training set and its gradients: the Bouligand candidate from the
//! generalized adjoint and the gradient of the Huber-smoothed cost.

use std::sync::Arc;

use rayon::prelude::*;

use crate::active_set::{classify_solution, ActiveSetPartition, SetKind};
use crate::data::{Dataset, TrainingPair};
use crate::denoise::{
    apply_hessian, hessian_diag, huber_grad, DenoiseProblem, DenoiseSolution, HuberSolver, TvSolver, TvTerm,
};
use crate::error::{Error, Result};
use crate::grid::{dot2, GradientOperator};
use crate::linalg::pcg;
use crate::param::ParamField;
use crate::reduced::{curvature_blocks, partition_constraints, ReducedSystem};
use crate::sensitivity::LinearSolve;

/// Environment variable holding the worker count for per-pair solves
/// (`0` or unset: one per core).
pub const THREADS_ENV: &str = "TVB_THREADS";

const HUBER_ADJOINT_RTOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientKind {
    Bouligand,
    Huber(f64),
}

#[derive(Debug, Clone)]
pub struct ReducedEvaluation {
    pub cost: f64,
    pub solutions: Vec<DenoiseSolution>,
    /// Concatenated dofs of every term, when requested.
    pub gradient: Option<Vec<f64>>,
    pub kind: Option<GradientKind>,
    /// Per pair and term; filled by Bouligand evaluations.
    pub partitions: Vec<Vec<ActiveSetPartition>>,
    /// Rows left out of the Bouligand formula because `alpha_j <= eps_a`.
    pub excluded: usize,
}

/// `1/2 ||u - ubar||^2`
pub fn tracking_loss(u: &[f64], ubar: &[f64]) -> f64 {
    u.iter().zip(ubar).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
}

/// Lower-level problem for one pair: `f` is the noisy image.
pub fn pair_problem(pair: &TrainingPair, ops: &[Arc<GradientOperator>], params: &[ParamField]) -> Result<DenoiseProblem> {
    if ops.len() != params.len() {
        return Err(Error::Shape(format!("{} operators but {} parameter fields", ops.len(), params.len())));
    }
    let terms = ops
        .iter()
        .zip(params)
        .map(|(op, p)| TvTerm::new(op.clone(), p.clone()))
        .collect::<Result<Vec<_>>>()?;
    DenoiseProblem::new(pair.noisy.clone(), terms)
}

/// Per-pixel gradient blocks (one per term) of one pair's loss.
#[derive(Debug, Clone)]
pub struct PairGradient {
    pub pixel: Vec<Vec<f64>>,
    pub excluded: usize,
}

/// Generalized adjoint for one pair: `p` in `V` with `<A p, v> = <u - ubar, v>`
/// for all `v` in `V`, then `g_j = -<q_j, (K p)_j> / alpha_j` on `I` and `B2`.
pub fn bouligand_pair_gradient(
    problem: &DenoiseProblem,
    sol: &DenoiseSolution,
    partitions: &[ActiveSetPartition],
    ubar: &[f64],
    method: LinearSolve,
) -> Result<PairGradient> {
    if partitions.len() != problem.terms().len() {
        return Err(Error::Shape("one partition per term expected".into()));
    }
    let n = problem.n();
    let u = sol.u.data();
    let excluded = partitions
        .iter()
        .map(|p| p.count(SetKind::ZeroInactive) + p.count(SetKind::Triactive))
        .sum();
    let dj: Vec<f64> = u.iter().zip(ubar).map(|(a, b)| a - b).collect();
    if dj.iter().all(|&v| v == 0.0) {
        return Ok(PairGradient {
            pixel: vec![vec![0.0; n]; problem.terms().len()],
            excluded,
        });
    }
    let constraints: Vec<_> = partitions
        .iter()
        .zip(&sol.duals)
        .map(|(p, q)| partition_constraints(p, q))
        .collect();
    let sys = ReducedSystem::new(problem, curvature_blocks(problem, u, partitions), &constraints)?;
    if problem.terms().len() > 1 && n > 1 && sys.dim() <= 1 {
        return Err(Error::AssumptionViolated(
            "the constraints of all terms leave only constant directions".into(),
        ));
    }
    let p = sys.solve(&dj, method)?;
    let pixel = problem
        .terms()
        .iter()
        .zip(&sol.duals)
        .zip(partitions)
        .map(|((t, q), part)| {
            (0..n)
                .map(|j| {
                    let counted = part.kind(j) == SetKind::Inactive || part.in_b2(j);
                    if !counted {
                        return 0.0;
                    }
                    let a = t.alpha()[j];
                    if a <= part.tolerances.eps_a {
                        return 0.0;
                    }
                    -dot2(q.row(j), t.op().row(j, &p)) / a
                })
                .collect()
        })
        .collect();
    Ok(PairGradient { pixel, excluded })
}

/// Regularized adjoint for one pair: `H p = -(u - ubar)` with
/// `H = I + sum K^T alpha h'_gamma(K u) K`, then `g_j = <h_gamma((K u)_j), (K p)_j>`.
pub fn huber_pair_gradient(problem: &DenoiseProblem, sol: &DenoiseSolution, gamma: f64, ubar: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = problem.n();
    let u = sol.u.data();
    let rhs: Vec<f64> = u.iter().zip(ubar).map(|(a, b)| b - a).collect();
    let mut p = vec![0.0; n];
    if rhs.iter().any(|&v| v != 0.0) {
        let solver = HuberSolver::new(gamma, 1.0)?;
        let blocks = solver.hessian_blocks(problem, u);
        let diag = hessian_diag(problem, &blocks);
        let cg = pcg(
            |v, out| apply_hessian(problem, &blocks, v, out),
            Some(&diag),
            &rhs,
            &mut p,
            HUBER_ADJOINT_RTOL,
            0.0,
            10 * n + 100,
        );
        if cg.breakdown || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem("Huber adjoint system".into()));
        }
    }
    Ok(problem
        .terms()
        .iter()
        .map(|t| {
            (0..n)
                .map(|j| dot2(huber_grad(t.op().row(j, u), gamma), t.op().row(j, &p)))
                .collect()
        })
        .collect())
}

fn aggregate(params: &[ParamField], pixel: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (p, g) in params.iter().zip(pixel) {
        out.extend(p.aggregate(g)?);
    }
    Ok(out)
}

fn add_blocks(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

/// Evaluates the reduced cost and its gradients over a dataset, keeping the
/// last solution of every pair as a warm start. Per-pair work runs on a
/// private thread pool; sums are taken in pair order, so results do not
/// depend on the worker count.
pub struct Evaluator {
    dataset: Dataset,
    ops: Vec<Arc<GradientOperator>>,
    pub solver: TvSolver,
    /// Residual tolerance of the Huber lower-level solves.
    pub huber_tol: f64,
    pub linear: LinearSolve,
    exact_cache: Vec<Option<DenoiseSolution>>,
    huber_cache: Vec<Option<DenoiseSolution>>,
    pool: rayon::ThreadPool,
    solves: usize,
}

impl Evaluator {
    /// Uses `TVB_THREADS` workers.
    pub fn new(dataset: Dataset, ops: Vec<Arc<GradientOperator>>, solver: TvSolver) -> Result<Self> {
        Self::with_threads(dataset, ops, solver, worker_count())
    }

    pub fn with_threads(
        dataset: Dataset,
        ops: Vec<Arc<GradientOperator>>,
        solver: TvSolver,
        threads: usize,
    ) -> Result<Self> {
        solver.validate()?;
        if ops.is_empty() {
            return Err(Error::InvalidParam("at least one operator is required".into()));
        }
        let shape = dataset.shape();
        if let Some(op) = ops.iter().find(|op| op.shape() != shape) {
            return Err(Error::Shape(format!("operator {:?} vs images {shape:?}", op.shape())));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))?;
        let len = dataset.len();
        Ok(Self {
            dataset,
            ops,
            solver,
            huber_tol: 1e-10,
            linear: LinearSolve::Auto,
            exact_cache: vec![None; len],
            huber_cache: vec![None; len],
            pool,
            solves: 0,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn ops(&self) -> &[Arc<GradientOperator>] {
        &self.ops
    }

    /// Lower-level solves performed so far.
    pub fn solves(&self) -> usize {
        self.solves
    }

    pub fn clear_cache(&mut self) {
        self.exact_cache.iter_mut().for_each(|c| *c = None);
        self.huber_cache.iter_mut().for_each(|c| *c = None);
    }

    fn check_params(&self, params: &[ParamField]) -> Result<()> {
        if params.len() != self.ops.len() {
            return Err(Error::Shape(format!(
                "{} parameter fields for {} operators",
                params.len(),
                self.ops.len()
            )));
        }
        if let Some(p) = params.iter().find(|p| p.shape() != self.dataset.shape()) {
            return Err(Error::Shape(format!("parameter field {:?} vs images {:?}", p.shape(), self.dataset.shape())));
        }
        Ok(())
    }

    /// Runs `f` on every pair in the pool and returns the results in pair
    /// order; the first failure is tagged with its pair index.
    fn map_pairs<T: Send>(
        &self,
        f: impl Fn(usize, &TrainingPair) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let pairs = self.dataset.pairs();
        let out: Vec<Result<T>> = self
            .pool
            .install(|| pairs.par_iter().enumerate().map(|(i, p)| f(i, p)).collect());
        out.into_iter()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| e.in_pair(i)))
            .collect()
    }

    fn exact_solutions(&mut self, params: &[ParamField]) -> Result<(Vec<DenoiseProblem>, Vec<DenoiseSolution>)> {
        self.check_params(params)?;
        let cache = &self.exact_cache;
        let results = self.map_pairs(|i, pair| {
            let problem = pair_problem(pair, &self.ops, params)?;
            let sol = self.solver.solve(&problem, cache[i].as_ref())?;
            Ok((problem, sol))
        })?;
        self.solves += results.len();
        let (problems, sols): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        for (c, s) in self.exact_cache.iter_mut().zip(&sols) {
            *c = Some(s.clone());
        }
        Ok((problems, sols))
    }

    fn total_loss(&self, sols: &[DenoiseSolution]) -> f64 {
        sols.iter()
            .zip(self.dataset.pairs())
            .map(|(s, p)| tracking_loss(s.u.data(), p.clean.data()))
            .sum()
    }

    /// `j(alpha)` with the exact lower level.
    pub fn cost(&mut self, params: &[ParamField]) -> Result<ReducedEvaluation> {
        let (_, sols) = self.exact_solutions(params)?;
        Ok(ReducedEvaluation {
            cost: self.total_loss(&sols),
            solutions: sols,
            gradient: None,
            kind: None,
            partitions: Vec::new(),
            excluded: 0,
        })
    }

    /// Exact cost and the Bouligand candidate gradient.
    pub fn bouligand(&mut self, params: &[ParamField]) -> Result<ReducedEvaluation> {
        let (problems, sols) = self.exact_solutions(params)?;
        let linear = self.linear;
        let per_pair = self.map_pairs(|i, pair| {
            let parts = classify_solution(&problems[i], &sols[i])?;
            let g = bouligand_pair_gradient(&problems[i], &sols[i], &parts, pair.clean.data(), linear)?;
            Ok((parts, g))
        })?;
        let n = self.dataset.pairs()[0].clean.len();
        let mut acc = vec![vec![0.0; n]; self.ops.len()];
        let mut excluded = 0;
        let mut partitions = Vec::with_capacity(per_pair.len());
        for (parts, g) in per_pair {
            add_blocks(&mut acc, &g.pixel);
            excluded += g.excluded;
            partitions.push(parts);
        }
        if excluded > 0 {
            log::debug!("{excluded} rows with alpha_j <= eps_a left out of the gradient");
        }
        Ok(ReducedEvaluation {
            cost: self.total_loss(&sols),
            solutions: sols,
            gradient: Some(aggregate(params, &acc)?),
            kind: Some(GradientKind::Bouligand),
            partitions,
            excluded,
        })
    }

    /// Cost and gradient of the Huber-smoothed reduced problem.
    pub fn huber(&mut self, params: &[ParamField], gamma: f64) -> Result<ReducedEvaluation> {
        self.check_params(params)?;
        let hs = HuberSolver::new(gamma, self.huber_tol)?;
        let cache = &self.huber_cache;
        let per_pair = self.map_pairs(|i, pair| {
            let problem = pair_problem(pair, &self.ops, params)?;
            let sol = hs.solve(&problem, cache[i].as_ref())?;
            let g = huber_pair_gradient(&problem, &sol, gamma, pair.clean.data())?;
            Ok((sol, g))
        })?;
        self.solves += per_pair.len();
        let n = self.dataset.pairs()[0].clean.len();
        let mut acc = vec![vec![0.0; n]; self.ops.len()];
        let mut sols = Vec::with_capacity(per_pair.len());
        for (s, g) in per_pair {
            add_blocks(&mut acc, &g);
            sols.push(s);
        }
        for (c, s) in self.huber_cache.iter_mut().zip(&sols) {
            *c = Some(s.clone());
        }
        Ok(ReducedEvaluation {
            cost: self.total_loss(&sols),
            solutions: sols,
            gradient: Some(aggregate(params, &acc)?),
            kind: Some(GradientKind::Huber(gamma)),
            partitions: Vec::new(),
            excluded: 0,
        })
    }

    pub fn evaluate(&mut self, params: &[ParamField], kind: GradientKind) -> Result<ReducedEvaluation> {
        match kind {
            GradientKind::Bouligand => self.bouligand(params),
            GradientKind::Huber(gamma) => self.huber(params, gamma),
        }
    }
}

/// One-shot exact reduced cost for a single-operator model.
pub fn reduced_cost(
    param: &ParamField,
    op: Arc<GradientOperator>,
    dataset: &Dataset,
    solver: &TvSolver,
) -> Result<ReducedEvaluation> {
    Evaluator::new(dataset.clone(), vec![op], solver.clone())?.cost(std::slice::from_ref(param))
}

/// Bouligand gradient of a finished evaluation, for a single-operator model.
pub fn bouligand_gradient(
    param: &ParamField,
    op: &Arc<GradientOperator>,
    dataset: &Dataset,
    eval: &ReducedEvaluation,
    partitions: &[ActiveSetPartition],
) -> Result<Vec<f64>> {
    if eval.solutions.len() != dataset.len() || partitions.len() != dataset.len() {
        return Err(Error::Shape("one solution and one partition per pair expected".into()));
    }
    let params = std::slice::from_ref(param);
    let mut acc = vec![vec![0.0; param.lift().len()]];
    for (i, pair) in dataset.pairs().iter().enumerate() {
        let problem = pair_problem(pair, std::slice::from_ref(op), params).map_err(|e| e.in_pair(i))?;
        let g = bouligand_pair_gradient(
            &problem,
            &eval.solutions[i],
            std::slice::from_ref(&partitions[i]),
            pair.clean.data(),
            LinearSolve::Auto,
        )
        .map_err(|e| e.in_pair(i))?;
        add_blocks(&mut acc, &g.pixel);
    }
    aggregate(params, &acc)
}

/// Huber-smoothed reduced cost and its gradient for a single-operator model.
pub fn huber_gradient(
    param: &ParamField,
    gamma: f64,
    op: Arc<GradientOperator>,
    dataset: &Dataset,
    tol: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut ev = Evaluator::new(dataset.clone(), vec![op], TvSolver::default())?;
    ev.huber_tol = tol;
    let r = ev.huber(std::slice::from_ref(param), gamma)?;
    Ok((r.cost, r.gradient.unwrap_or_default()))
}
