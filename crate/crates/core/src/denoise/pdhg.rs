//! Primal-dual hybrid gradient iteration on the saddle form
//! `min_u max_{||q_j|| <= alpha_j} 1/2 ||u - f||^2 + <K u, q>`.
//!
//! Steps satisfy `tau * sigma * L^2 = 0.99^2` with `L^2` a Gershgorin bound
//! on the stacked operator. The ratio `tau / sigma` is rebalanced from the
//! primal and dual iterate residuals with a geometrically decaying
//! adaptation level, so the product stays fixed.

use super::{primal_dual_residual, DenoiseProblem, DenoiseSolution, Residuals, TvSolver};
use crate::error::{Error, Result};
use crate::grid::{norm2, GradientField};

const CHECK_EVERY: usize = 10;
const ADAPT_START: f64 = 0.5;
const ADAPT_DECAY: f64 = 0.95;
const ADAPT_FLOOR: f64 = 1e-3;
const BALANCE_BAND: f64 = 1.5;

pub(super) fn project_ball(q: &mut [f64; 2], radius: f64) {
    let nq = norm2(*q);
    if nq > radius {
        if radius <= 0.0 {
            *q = [0.0, 0.0];
        } else {
            let s = radius / nq;
            q[0] *= s;
            q[1] *= s;
        }
    }
}

struct Start {
    u: Vec<f64>,
    duals: Vec<GradientField>,
    ratio: f64,
}

fn initial_state(problem: &DenoiseProblem, warm: Option<&DenoiseSolution>) -> Start {
    let n = problem.n();
    if let Some(w) = warm {
        if w.u.shape() == problem.f().shape()
            && w.duals.len() == problem.terms().len()
            && w.duals.iter().all(|q| q.len() == n)
        {
            let mut duals = w.duals.clone();
            for (t, q) in problem.terms().iter().zip(&mut duals) {
                for (qj, &a) in q.rows_mut().iter_mut().zip(t.alpha()) {
                    project_ball(qj, a);
                }
            }
            let ratio = if w.step_ratio.is_finite() && w.step_ratio > 0.0 {
                w.step_ratio
            } else {
                1.0
            };
            return Start {
                u: w.u.data().to_vec(),
                duals,
                ratio,
            };
        }
    }
    Start {
        u: problem.f().data().to_vec(),
        duals: vec![GradientField::zeros(n); problem.terms().len()],
        ratio: 1.0,
    }
}

fn finish(
    problem: &DenoiseProblem,
    u: Vec<f64>,
    duals: Vec<GradientField>,
    residuals: Residuals,
    iterations: usize,
    step_ratio: f64,
) -> DenoiseSolution {
    DenoiseSolution {
        u: problem.f().with_data(u).expect("shape preserved"),
        duals,
        residuals,
        iterations,
        step_ratio,
    }
}

pub(super) fn solve(cfg: &TvSolver, problem: &DenoiseProblem, warm: Option<&DenoiseSolution>) -> Result<DenoiseSolution> {
    let n = problem.n();
    let f = problem.f().data();
    let Start { mut u, mut duals, ratio } = initial_state(problem, warm);

    let res = primal_dual_residual(problem, &u, &duals);
    if res.within(cfg.tol, cfg.tol_dual) {
        return Ok(finish(problem, u, duals, res, 0, ratio));
    }

    let l2 = problem.stacked_norm_sq_bound();
    let no_terms = problem.terms().iter().all(|t| t.alpha().iter().all(|&a| a == 0.0));
    if l2 == 0.0 || no_terms {
        // nothing couples the pixels: u = f and q = 0 is exact
        let duals = vec![GradientField::zeros(n); problem.terms().len()];
        let u = f.to_vec();
        let res = primal_dual_residual(problem, &u, &duals);
        return Ok(finish(problem, u, duals, res, 0, 1.0));
    }

    let step = 0.99 / l2.sqrt();
    let (mut tau, mut sigma) = (step * ratio, step / ratio);
    let mut adapt = if cfg.adaptive_steps { ADAPT_START } else { 0.0 };

    let mut u_bar = u.clone();
    let mut u_old = vec![0.0; n];
    let mut q_old: Vec<GradientField> = duals.clone();
    let mut ktq = vec![0.0; n];
    let mut z = vec![[0.0; 2]; n];
    let mut last = res;

    for k in 1..=cfg.max_iter {
        let check = k % CHECK_EVERY == 0 || k == cfg.max_iter;
        let adapting = check && adapt > ADAPT_FLOOR;
        if adapting {
            for (a, b) in q_old.iter_mut().zip(&duals) {
                a.rows_mut().copy_from_slice(b.rows());
            }
        }
        for (t, q) in problem.terms().iter().zip(duals.iter_mut()) {
            t.op().apply_into(&u_bar, &mut z);
            for ((qj, zj), &a) in q.rows_mut().iter_mut().zip(&z).zip(t.alpha()) {
                qj[0] += sigma * zj[0];
                qj[1] += sigma * zj[1];
                project_ball(qj, a);
            }
        }
        ktq.fill(0.0);
        for (t, q) in problem.terms().iter().zip(&duals) {
            t.op().apply_transpose_add(q.rows(), 1.0, &mut ktq);
        }
        u_old.copy_from_slice(&u);
        for i in 0..n {
            u[i] = (u[i] - tau * ktq[i] + tau * f[i]) / (1.0 + tau);
            u_bar[i] = 2.0 * u[i] - u_old[i];
        }

        if check {
            // ktq belongs to the current duals, so stationarity is cheap to screen
            let stationarity = (0..n).map(|i| (u[i] - f[i] + ktq[i]).abs()).fold(0.0, f64::max);
            if stationarity <= cfg.tol || k == cfg.max_iter {
                last = primal_dual_residual(problem, &u, &duals);
                if last.within(cfg.tol, cfg.tol_dual) {
                    return Ok(finish(problem, u, duals, last, k, tau / step));
                }
            } else {
                last.stationarity = stationarity;
            }
        }
        if adapting {
            let (p, d) = iterate_residuals(problem, &u_old, &u, &q_old, &duals, tau, sigma);
            if p > cfg.step_balance * BALANCE_BAND * d {
                tau /= 1.0 - adapt;
                sigma *= 1.0 - adapt;
                adapt *= ADAPT_DECAY;
            } else if p * BALANCE_BAND < cfg.step_balance * d {
                tau *= 1.0 - adapt;
                sigma /= 1.0 - adapt;
                adapt *= ADAPT_DECAY;
            }
        }
    }

    Err(Error::NonConvergence {
        iterations: cfg.max_iter,
        residuals: last,
    })
}

/// l1 norms of the primal and dual residuals of one step.
fn iterate_residuals(
    problem: &DenoiseProblem,
    u_old: &[f64],
    u: &[f64],
    q_old: &[GradientField],
    q: &[GradientField],
    tau: f64,
    sigma: f64,
) -> (f64, f64) {
    let du: Vec<f64> = u_old.iter().zip(u).map(|(a, b)| a - b).collect();
    let mut primal: Vec<f64> = du.iter().map(|d| d / tau).collect();
    let mut dual = 0.0;
    let mut dq = vec![[0.0; 2]; problem.n()];
    for ((t, qo), qn) in problem.terms().iter().zip(q_old).zip(q) {
        for ((d, a), b) in dq.iter_mut().zip(qo.rows()).zip(qn.rows()) {
            *d = [a[0] - b[0], a[1] - b[1]];
        }
        t.op().apply_transpose_add(&dq, -1.0, &mut primal);
        for (j, dqj) in dq.iter().enumerate() {
            let kd = t.op().row(j, &du);
            dual += (dqj[0] / sigma - kd[0]).abs() + (dqj[1] / sigma - kd[1]).abs();
        }
    }
    (primal.iter().map(|v| v.abs()).sum(), dual)
}
