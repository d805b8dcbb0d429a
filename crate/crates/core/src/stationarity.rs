//! Numerical check of the M-stationarity system: lower-level optimality,
//! the adjoint equation with multipliers `(vartheta, K^T mu, p)` in the
//! limiting normal cone of the constraint graph, and the sign and
//! complementarity conditions on the parameter.

use std::fmt;

use crate::active_set::{classify_solution, ActiveSetPartition, SetKind};
use crate::denoise::{primal_dual_residual, DenoiseProblem, DenoiseSolution};
use crate::error::{Error, Result};
use crate::grid::{dot2, norm2, GradientField};
use crate::linalg::{cgls, norm, norm_inf};
use crate::reduced::{curvature_blocks, ReducedSystem, RowConstraint};
use crate::sensitivity::LinearSolve;

const EXHAUSTIVE_LIMIT: usize = 12;
const GREEDY_SOLVE_CAP: usize = 64;

/// Branch of the disjunctive cone conditions on a biactive or triactive row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `(K p)_j = 0`, `vartheta_j = 0`
    Zero,
    /// Biactive: `(K p)_j = c q_j`, `<mu_j, q_j> = 0`, `vartheta_j = -c alpha_j`.
    Span,
    /// Triactive: `vartheta_j <= ||(K p)_j||`, `mu_j = 0`.
    Free,
}

impl Branch {
    fn symbol(self) -> &'static str {
        match self {
            Branch::Zero => "zero",
            Branch::Span => "span",
            Branch::Free => "free",
        }
    }
}

/// A branch choice for row `row` of term `term` of pair `pair`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchChoice {
    pub pair: usize,
    pub term: usize,
    pub row: usize,
    pub branch: Branch,
}

/// Sup-norm residuals of the equation families.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CertificateResiduals {
    /// `u - f + sum K^T q = 0`
    pub stationarity: f64,
    /// `<q_j, (K u)_j> - alpha_j ||(K u)_j|| = 0`
    pub complementarity: f64,
    /// `||q_j|| <= alpha_j`
    pub dual_feasibility: f64,
    /// `p - sum K^T mu - grad J = 0`
    pub adjoint: f64,
    /// `P^T vartheta + rho = 0` in parameter space.
    pub multiplier_balance: f64,
    /// `rho` in the normal cone of the nonnegative orthant at `alpha`.
    pub sign_complementarity: f64,
    /// Row-wise conditions of the limiting normal cone.
    pub cone: f64,
}

impl CertificateResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.complementarity,
            self.dual_feasibility,
            self.adjoint,
            self.multiplier_balance,
            self.sign_complementarity,
            self.cone,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("a lower-level stationarity", self.stationarity),
            ("b lower-level complementarity", self.complementarity),
            ("c dual feasibility", self.dual_feasibility),
            ("d adjoint equation", self.adjoint),
            ("e vartheta + rho", self.multiplier_balance),
            ("f alpha/rho complementarity", self.sign_complementarity),
            ("g normal-cone conditions", self.cone),
        ]
    }
}

/// Multipliers for one training pair.
#[derive(Debug, Clone)]
pub struct PairMultipliers {
    pub p: Vec<f64>,
    /// One field per term.
    pub mu: Vec<GradientField>,
    /// Per-pixel `vartheta` of every term.
    pub vartheta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MStationarityCertificate {
    pub pairs: Vec<PairMultipliers>,
    /// Parameter-space multiplier, concatenated over terms; lies in the
    /// normal cone `{rho <= 0, rho_k = 0 where alpha_k > 0}`.
    pub rho: Vec<f64>,
    pub residuals: CertificateResiduals,
    /// Violation of `0 <= alpha ⊥ -P^T vartheta >= 0`, the sign convention
    /// read literally from the system statement.
    pub literal_sign_residual: f64,
    pub branches: Vec<BranchChoice>,
    pub tol: f64,
    pub stationary: bool,
    /// No branch combination brought every residual within `tol`.
    pub no_branch_fits: bool,
    /// Combinations tried.
    pub branch_solves: usize,
}

impl fmt::Display for MStationarityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "status {}", if self.stationary { "stationary" } else { "not-stationary" })?;
        writeln!(f, "tolerance {:.3e}", self.tol)?;
        for (name, v) in self.residuals.named() {
            writeln!(f, "residual {name}: {v:.6e}")?;
        }
        writeln!(f, "residual literal-sign: {:.6e}", self.literal_sign_residual)?;
        writeln!(f, "branch-combinations {}", self.branch_solves)?;
        if self.no_branch_fits {
            writeln!(f, "no-branch-fits")?;
        }
        for b in &self.branches {
            writeln!(f, "branch pair {} term {} row {}: {}", b.pair, b.term, b.row, b.branch.symbol())?;
        }
        Ok(())
    }
}

/// One pair as seen by the checker.
pub struct StationarityInput<'a> {
    pub problem: &'a DenoiseProblem,
    pub sol: &'a DenoiseSolution,
    /// `grad J(u)`, e.g. `u - ubar`.
    pub grad_j: &'a [f64],
}

struct Prepared<'a> {
    input: &'a StationarityInput<'a>,
    partitions: Vec<ActiveSetPartition>,
}

struct Evaluated {
    multipliers: Vec<PairMultipliers>,
    rho: Vec<f64>,
    residuals: CertificateResiduals,
    literal: f64,
}

/// Checks M-stationarity of one lower-level solution for the loss gradient
/// `grad_j`.
pub fn check_m_stationarity(
    problem: &DenoiseProblem,
    sol: &DenoiseSolution,
    grad_j: &[f64],
    tol: f64,
) -> Result<MStationarityCertificate> {
    check_m_stationarity_pairs(&[StationarityInput { problem, sol, grad_j }], tol)
}

/// Checks M-stationarity of a training set: the adjoint and cone conditions
/// hold per pair and the parameter-space balance holds for the sum.
pub fn check_m_stationarity_pairs(inputs: &[StationarityInput<'_>], tol: f64) -> Result<MStationarityCertificate> {
    if inputs.is_empty() {
        return Err(Error::InvalidParam("nothing to certify".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParam("tolerance must be positive".into()));
    }
    let first = inputs[0].problem;
    for inp in inputs {
        if inp.grad_j.len() != inp.problem.n() {
            return Err(Error::Shape("grad J must have one entry per pixel".into()));
        }
        let same = inp.problem.terms().len() == first.terms().len()
            && inp
                .problem
                .terms()
                .iter()
                .zip(first.terms())
                .all(|(a, b)| a.param().dofs() == b.param().dofs() && a.param().kind() == b.param().kind());
        if !same {
            return Err(Error::InvalidParam("all pairs must share the parameter fields".into()));
        }
    }
    let prepared = inputs
        .iter()
        .enumerate()
        .map(|(i, inp)| {
            classify_solution(inp.problem, inp.sol)
                .map(|partitions| Prepared { input: inp, partitions })
                .map_err(|e| e.in_pair(i))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (pi, pr) in prepared.iter().enumerate() {
        for (ti, part) in pr.partitions.iter().enumerate() {
            let op = pr.input.problem.terms()[ti].op();
            for j in (0..part.len()).filter(|&j| !op.is_zero_row(j)) {
                match part.kind(j) {
                    SetKind::Biactive | SetKind::Triactive => rows.push((pi, ti, j, part.kind(j))),
                    _ => {}
                }
            }
        }
    }
    let alt = |k: SetKind| if k == SetKind::Biactive { Branch::Span } else { Branch::Free };
    let make = |mask: &dyn Fn(usize) -> bool| -> Vec<BranchChoice> {
        rows.iter()
            .enumerate()
            .map(|(i, &(pair, term, row, kind))| BranchChoice {
                pair,
                term,
                row,
                branch: if mask(i) { alt(kind) } else { Branch::Zero },
            })
            .collect()
    };

    let mut solves = 0;
    let mut best: Option<(Vec<BranchChoice>, Evaluated)> = None;
    let consider = |choice: Vec<BranchChoice>,
                    best: &mut Option<(Vec<BranchChoice>, Evaluated)>,
                    solves: &mut usize|
     -> Result<bool> {
        *solves += 1;
        let ev = evaluate(&prepared, &choice)?;
        let better = best
            .as_ref()
            .is_none_or(|(_, b)| ev.residuals.max() < b.residuals.max());
        if better {
            *best = Some((choice, ev));
        }
        Ok(better)
    };
    if rows.len() <= EXHAUSTIVE_LIMIT {
        for mask in 0u32..(1u32 << rows.len()) {
            consider(make(&|i| mask >> i & 1 == 1), &mut best, &mut solves)?;
            if best.as_ref().is_some_and(|(_, b)| b.residuals.max() <= tol) {
                break;
            }
        }
    } else {
        let mut flags = vec![false; rows.len()];
        consider(make(&|_| false), &mut best, &mut solves)?;
        'sweep: for i in 0..rows.len() {
            if solves >= GREEDY_SOLVE_CAP || best.as_ref().is_some_and(|(_, b)| b.residuals.max() <= tol) {
                break 'sweep;
            }
            flags[i] = true;
            let f = flags.clone();
            if !consider(make(&|k| f[k]), &mut best, &mut solves)? {
                flags[i] = false;
            }
        }
    }
    let (branches, ev) = best.expect("at least one branch combination is evaluated");
    let max = ev.residuals.max();
    Ok(MStationarityCertificate {
        pairs: ev.multipliers,
        rho: ev.rho,
        residuals: ev.residuals,
        literal_sign_residual: ev.literal,
        branches,
        tol,
        stationary: max <= tol,
        no_branch_fits: max > tol,
        branch_solves: solves,
    })
}

fn perp(q: [f64; 2]) -> [f64; 2] {
    let n = norm2(q);
    [-q[1] / n, q[0] / n]
}

fn evaluate(prepared: &[Prepared<'_>], choice: &[BranchChoice]) -> Result<Evaluated> {
    let mut res = CertificateResiduals::default();
    let mut multipliers = Vec::with_capacity(prepared.len());
    let mut dof_theta: Option<Vec<f64>> = None;
    for (pi, pr) in prepared.iter().enumerate() {
        let problem = pr.input.problem;
        let sol = pr.input.sol;
        let u = sol.u.data();
        let n = problem.n();

        let lower = primal_dual_residual(problem, u, &sol.duals);
        res.stationarity = res.stationarity.max(lower.stationarity);
        res.complementarity = res.complementarity.max(lower.complementarity);
        res.dual_feasibility = res.dual_feasibility.max(lower.dual_feasibility);

        let mut branch = vec![vec![None; n]; problem.terms().len()];
        for c in choice.iter().filter(|c| c.pair == pi) {
            branch[c.term][c.row] = Some(c.branch);
        }
        let constraints: Vec<Vec<RowConstraint>> = pr
            .partitions
            .iter()
            .zip(&sol.duals)
            .zip(&branch)
            .map(|((part, q), br)| {
                (0..n)
                    .map(|j| match (part.kind(j), br[j]) {
                        (SetKind::StronglyActive, _) => RowConstraint::Zero,
                        (SetKind::Biactive, Some(Branch::Span)) => RowConstraint::Span(q.row(j)),
                        (SetKind::Biactive, _) => RowConstraint::Zero,
                        (SetKind::Triactive, Some(Branch::Free)) => RowConstraint::Free,
                        (SetKind::Triactive, _) => RowConstraint::Zero,
                        _ => RowConstraint::Free,
                    })
                    .collect()
            })
            .collect();
        let blocks = curvature_blocks(problem, u, &pr.partitions);
        let sys = ReducedSystem::new(problem, blocks.clone(), &constraints)?;
        let p = sys.solve(pr.input.grad_j, LinearSolve::Auto)?;

        // mu on constrained rows from K_Z^T mu_Z = A p - grad J
        let mut ap = vec![0.0; n];
        sys.apply_full(&p, &mut ap);
        let target: Vec<f64> = ap.iter().zip(pr.input.grad_j).map(|(a, g)| a - g).collect();
        let mut layout = Vec::new();
        for (ti, c) in constraints.iter().enumerate() {
            for (j, r) in c.iter().enumerate() {
                match r {
                    RowConstraint::Zero => layout.push((ti, j, None)),
                    RowConstraint::Span(q) => layout.push((ti, j, Some(perp(*q)))),
                    RowConstraint::Free => {}
                }
            }
        }
        let cols: usize = layout.iter().map(|(_, _, d)| if d.is_some() { 1 } else { 2 }).sum();
        let terms = problem.terms();
        let coeffs = if cols == 0 || norm_inf(&target) == 0.0 {
            vec![0.0; cols]
        } else {
            let apply = |x: &[f64], out: &mut [f64]| {
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut at = 0;
                for &(ti, j, d) in &layout {
                    let z = match d {
                        Some(d) => {
                            at += 1;
                            [x[at - 1] * d[0], x[at - 1] * d[1]]
                        }
                        None => {
                            at += 2;
                            [x[at - 2], x[at - 1]]
                        }
                    };
                    terms[ti].op().add_row_transpose_at(j, z, 1.0, out);
                }
            };
            let apply_t = |r: &[f64], out: &mut [f64]| {
                let mut at = 0;
                for &(ti, j, d) in &layout {
                    let z = terms[ti].op().row(j, r);
                    match d {
                        Some(d) => {
                            out[at] = dot2(z, d);
                            at += 1;
                        }
                        None => {
                            out[at] = z[0];
                            out[at + 1] = z[1];
                            at += 2;
                        }
                    }
                }
            };
            cgls(apply, apply_t, cols, &target, 1e-14 * (1.0 + norm(&target)), 20 * (cols + n))
        };

        let mut mu: Vec<GradientField> = terms.iter().map(|_| GradientField::zeros(n)).collect();
        for (ti, (t, b)) in terms.iter().zip(&blocks).enumerate() {
            let part = &pr.partitions[ti];
            for j in 0..n {
                if part.kind(j) == SetKind::Inactive {
                    let z = t.op().row(j, &p);
                    let bj = b[j];
                    mu[ti].rows_mut()[j] = [
                        -(bj[0][0] * z[0] + bj[0][1] * z[1]),
                        -(bj[1][0] * z[0] + bj[1][1] * z[1]),
                    ];
                }
            }
        }
        let mut at = 0;
        for &(ti, j, d) in &layout {
            mu[ti].rows_mut()[j] = match d {
                Some(d) => {
                    at += 1;
                    [coeffs[at - 1] * d[0], coeffs[at - 1] * d[1]]
                }
                None => {
                    at += 2;
                    [coeffs[at - 2], coeffs[at - 1]]
                }
            };
        }

        // adjoint residual p - sum K^T mu - grad J
        let mut adj: Vec<f64> = p.iter().zip(pr.input.grad_j).map(|(a, g)| a - g).collect();
        for (t, m) in terms.iter().zip(&mu) {
            t.op().apply_transpose_add(m.rows(), -1.0, &mut adj);
        }
        res.adjoint = res.adjoint.max(norm_inf(&adj));

        // vartheta and the row-wise cone conditions
        let mut vartheta = Vec::with_capacity(terms.len());
        for (ti, t) in terms.iter().enumerate() {
            let part = &pr.partitions[ti];
            let q = &sol.duals[ti];
            let mut th = vec![0.0; n];
            for j in 0..n {
                let kp = t.op().row(j, &p);
                let m = mu[ti].row(j);
                let a = t.alpha()[j];
                let (value, cone) = match (part.kind(j), branch[ti][j]) {
                    (SetKind::Inactive, _) => {
                        let ku = t.op().row(j, u);
                        let nu = norm2(ku);
                        let v = -dot2(ku, kp) / nu;
                        let tz = blocks[ti][j];
                        let r = [
                            m[0] + tz[0][0] * kp[0] + tz[0][1] * kp[1],
                            m[1] + tz[1][0] * kp[0] + tz[1][1] * kp[1],
                        ];
                        (v, norm2(r))
                    }
                    (SetKind::Biactive, Some(Branch::Span)) => {
                        let qj = q.row(j);
                        let qq = dot2(qj, qj);
                        let c = dot2(kp, qj) / qq;
                        let off = norm2([kp[0] - c * qj[0], kp[1] - c * qj[1]]);
                        (-c * a, off.max(dot2(m, qj).abs() / qq.sqrt()))
                    }
                    (SetKind::ZeroInactive, _) => {
                        let ku = t.op().row(j, u);
                        let v = -dot2(ku, kp) / norm2(ku);
                        (v, norm2(m))
                    }
                    (SetKind::Triactive, Some(Branch::Free)) => (norm2(kp), norm2(m)),
                    _ => (0.0, norm2(kp)),
                };
                th[j] = value;
                res.cone = res.cone.max(cone);
            }
            vartheta.push(th);
        }

        let mut theta_dofs = Vec::new();
        for (t, th) in terms.iter().zip(&vartheta) {
            theta_dofs.extend(t.param().aggregate(th)?);
        }
        match &mut dof_theta {
            Some(acc) => acc.iter_mut().zip(&theta_dofs).for_each(|(a, b)| *a += b),
            None => dof_theta = Some(theta_dofs),
        }
        multipliers.push(PairMultipliers { p, mu, vartheta });
    }

    let theta = dof_theta.unwrap_or_default();
    let terms = prepared[0].input.problem.terms();
    let alpha: Vec<f64> = terms.iter().flat_map(|t| t.param().dofs().iter().copied()).collect();
    let eps_a: Vec<f64> = terms
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| std::iter::repeat_n(prepared[0].partitions[ti].tolerances.eps_a, t.param().len()))
        .collect();
    let mut rho = vec![0.0; theta.len()];
    let mut literal = 0.0f64;
    for k in 0..theta.len() {
        if alpha[k] <= eps_a[k] {
            rho[k] = (-theta[k]).min(0.0);
        }
        res.multiplier_balance = res.multiplier_balance.max((theta[k] + rho[k]).abs());
        res.sign_complementarity = res.sign_complementarity.max(rho[k].max(0.0)).max((alpha[k] * rho[k]).abs());
        let lit = -theta[k];
        literal = literal.max((-lit).max(0.0)).max((alpha[k] * lit).abs());
    }
    Ok(Evaluated {
        multipliers,
        rho,
        residuals: res,
        literal,
    })
}
