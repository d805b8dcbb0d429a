//! Directional derivatives of the solution map `alpha -> u(alpha)`: a
//! finite-difference oracle and the linear sensitivity system.

use crate::active_set::{ActiveSetPartition, SetKind};
use crate::denoise::{DenoiseProblem, DenoiseSolution, TvSolver};
use crate::error::{Error, Result};
use crate::param::ParamField;
use crate::reduced::{curvature_blocks, partition_constraints, ReducedSystem};

pub use crate::reduced::LinearSolve;

/// Difference quotients `(S(alpha + t h) - S(alpha)) / t` and their
/// extrapolation to `t = 0`.
#[derive(Debug, Clone)]
pub struct FdDerivative {
    pub t: Vec<f64>,
    pub etas: Vec<Vec<f64>>,
    /// Linear extrapolation through the two smallest steps, exact for a
    /// first-order error term.
    pub extrapolated: Vec<f64>,
}

fn check_direction(problem: &DenoiseProblem, h: &[Vec<f64>]) -> Result<()> {
    if h.len() != problem.terms().len() || h.iter().any(|hi| hi.len() != problem.n()) {
        return Err(Error::Shape(format!(
            "direction needs {} per-pixel blocks of length {}",
            problem.terms().len(),
            problem.n()
        )));
    }
    Ok(())
}

/// Per-pixel parameters `alpha + t h` for every term.
pub(crate) fn shifted_problem(problem: &DenoiseProblem, h: &[Vec<f64>], t: f64) -> Result<DenoiseProblem> {
    let (m1, m2) = problem.f().shape();
    let params = problem
        .terms()
        .iter()
        .zip(h)
        .map(|(term, hi)| {
            let vals: Vec<f64> = term.alpha().iter().zip(hi).map(|(a, d)| a + t * d).collect();
            if let Some(j) = vals.iter().position(|&v| v < 0.0) {
                return Err(Error::InvalidParam(format!("alpha + t h is negative at pixel {j} for t = {t}")));
            }
            ParamField::per_pixel(m1, m2, vals)
        })
        .collect::<Result<Vec<_>>>()?;
    problem.with_params(params)
}

/// Finite-difference estimates of the directional derivative of the
/// solution map along the per-pixel direction `h` (one block per term).
/// Every solve runs at `solver.tol`; pass a tight tolerance.
pub fn directional_derivative_fd(
    problem: &DenoiseProblem,
    h: &[Vec<f64>],
    t_list: &[f64],
    solver: &TvSolver,
) -> Result<FdDerivative> {
    check_direction(problem, h)?;
    if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParam("step list must hold positive values".into()));
    }
    let base = solver.solve(problem, None)?;
    let mut etas = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let shifted = shifted_problem(problem, h, t)?;
        let s = solver.solve(&shifted, Some(&base))?;
        etas.push(
            s.u.data()
                .iter()
                .zip(base.u.data())
                .map(|(a, b)| (a - b) / t)
                .collect::<Vec<f64>>(),
        );
    }
    let mut order: Vec<usize> = (0..t_list.len()).collect();
    order.sort_by(|&a, &b| t_list[a].total_cmp(&t_list[b]));
    let extrapolated = if order.len() >= 2 && t_list[order[0]] != t_list[order[1]] {
        let (t1, t2) = (t_list[order[0]], t_list[order[1]]);
        let (e1, e2) = (&etas[order[0]], &etas[order[1]]);
        e1.iter().zip(e2).map(|(a, b)| (t2 * a - t1 * b) / (t2 - t1)).collect()
    } else {
        etas[order[0]].clone()
    };
    Ok(FdDerivative {
        t: t_list.to_vec(),
        etas,
        extrapolated,
    })
}

/// Solves the sensitivity system on
/// `V = {v : (K v)_j = 0 on As and B1, (K v)_j in span(q_j) on B2}`:
///
/// `<eta, v> + sum_{I} <alpha_j T_j (K eta)_j, (K v)_j>
///   = - sum_{I and B2} (h_j / alpha_j) <q_j, (K v)_j>` for all `v` in `V`.
///
/// Requires `I0` and `T` to be empty in every term.
pub fn solve_sensitivity_system(
    problem: &DenoiseProblem,
    sol: &DenoiseSolution,
    partitions: &[ActiveSetPartition],
    h: &[Vec<f64>],
    method: LinearSolve,
) -> Result<Vec<f64>> {
    check_direction(problem, h)?;
    if partitions.len() != problem.terms().len() {
        return Err(Error::Shape("one partition per term expected".into()));
    }
    for (i, p) in partitions.iter().enumerate() {
        if !p.has_positive_weights() {
            return Err(Error::AssumptionViolated(format!(
                "term {i}: zero-weight index sets are not empty ({p})"
            )));
        }
    }
    let u = sol.u.data();
    let n = problem.n();
    let mut b = vec![0.0; n];
    for (((t, q), p), hi) in problem.terms().iter().zip(&sol.duals).zip(partitions).zip(h) {
        for j in 0..n {
            let counted = p.kind(j) == SetKind::Inactive || p.in_b2(j);
            if counted && hi[j] != 0.0 {
                let qj = q.row(j);
                t.op().add_row_transpose_at(j, qj, -hi[j] / t.alpha()[j], &mut b);
            }
        }
    }
    if b.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let constraints: Vec<_> = partitions
        .iter()
        .zip(&sol.duals)
        .map(|(p, q)| partition_constraints(p, q))
        .collect();
    let sys = ReducedSystem::new(problem, curvature_blocks(problem, u, partitions), &constraints)?;
    sys.solve(&b, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::active_set::{classify_solution, cone_membership};
    use crate::grid::{GradientOperator, ImageGrid, Scheme};
    use std::sync::Arc;

    fn tight() -> TvSolver {
        TvSolver::with_tol(1e-12)
    }

    fn two_pixel(alpha: f64) -> DenoiseProblem {
        let f = ImageGrid::new(1, 2, vec![0.0, 1.0]).unwrap();
        let op = Arc::new(GradientOperator::new(1, 2, Scheme::Forward));
        DenoiseProblem::single(f, op, ParamField::scalar(1, 2, alpha).unwrap()).unwrap()
    }

    fn smooth(m: usize, alpha: f64) -> DenoiseProblem {
        let f = ImageGrid::from_fn(m, m, |r, c| 0.1 * r as f64 + 0.07 * c as f64 + 0.02 * ((r * c) as f64).sin());
        let op = Arc::new(GradientOperator::new(m, m, Scheme::Forward));
        DenoiseProblem::single(f, op, ParamField::scalar(m, m, alpha).unwrap()).unwrap()
    }

    #[test]
    fn zero_direction_gives_zero() {
        let p = smooth(4, 0.01);
        let fd = directional_derivative_fd(&p, &[vec![0.0; 16]], &[1e-3, 5e-4], &tight()).unwrap();
        assert!(fd.etas.iter().flatten().all(|&v| v == 0.0));
        let s = tight().solve(&p, None).unwrap();
        let parts = classify_solution(&p, &s).unwrap();
        let eta = solve_sensitivity_system(&p, &s, &parts, &[vec![0.0; 16]], LinearSolve::Auto).unwrap();
        assert!(eta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_pixel_sensitivity_matches_closed_form() {
        let p = two_pixel(0.2);
        let s = tight().solve(&p, None).unwrap();
        let parts = classify_solution(&p, &s).unwrap();
        // u = (alpha, 1 - alpha): du/dalpha = (1, -1) for a uniform direction
        let eta = solve_sensitivity_system(&p, &s, &parts, &[vec![1.0, 1.0]], LinearSolve::Auto).unwrap();
        assert!((eta[0] - 1.0).abs() < 1e-9 && (eta[1] + 1.0).abs() < 1e-9, "{eta:?}");
    }

    #[test]
    fn kink_is_directional() {
        let p = two_pixel(0.5);
        let up = directional_derivative_fd(&p, &[vec![1.0, 1.0]], &[1e-3, 5e-4], &tight()).unwrap();
        let down = directional_derivative_fd(&p, &[vec![-1.0, -1.0]], &[1e-3, 5e-4], &tight()).unwrap();
        let sum: f64 = up.extrapolated.iter().zip(&down.extrapolated).map(|(a, b)| (a + b).abs()).sum();
        assert!(sum > 0.5, "one-sided limits should not cancel: {up:?} {down:?}");
    }

    #[test]
    fn fd_converges_linearly_without_kinks() {
        let p = smooth(4, 0.005);
        let s = tight().solve(&p, None).unwrap();
        let parts = classify_solution(&p, &s).unwrap();
        assert!(parts[0].is_strictly_complementary(), "{}", parts[0]);
        let h = vec![(0..16).map(|i| 0.5 + 0.1 * (i % 4) as f64).collect::<Vec<_>>()];
        let fd = directional_derivative_fd(&p, &h, &[4e-4, 2e-4, 1e-4], &tight()).unwrap();
        let d = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let d1 = d(&fd.etas[0], &fd.etas[1]);
        let d2 = d(&fd.etas[1], &fd.etas[2]);
        assert!(d2 <= 0.6 * d1 + 1e-8, "{d1} {d2}");
        let eta = solve_sensitivity_system(&p, &s, &parts, &h, LinearSolve::Auto).unwrap();
        let err = d(&eta, &fd.extrapolated);
        let scale = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-5 * scale.max(1.0), "{err}");
        assert!(cone_membership(p.terms()[0].op(), &eta, &parts[0], &s.duals[0], p.terms()[0].alpha(), 1e-8));
    }

    #[test]
    fn linear_in_direction() {
        let p = smooth(5, 0.02);
        let s = tight().solve(&p, None).unwrap();
        let parts = classify_solution(&p, &s).unwrap();
        let h1: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
        let h2: Vec<f64> = (0..25).map(|i| (i as f64 * 0.3).cos()).collect();
        let h12: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
        let e1 = solve_sensitivity_system(&p, &s, &parts, &[h1], LinearSolve::Auto).unwrap();
        let e2 = solve_sensitivity_system(&p, &s, &parts, &[h2], LinearSolve::Auto).unwrap();
        let e12 = solve_sensitivity_system(&p, &s, &parts, &[h12], LinearSolve::Auto).unwrap();
        for i in 0..25 {
            assert!((e12[i] - e1[i] - e2[i]).abs() < 1e-10);
        }
        for (eta, part) in [(&e1, &parts[0]), (&e12, &parts[0])] {
            assert!(cone_membership(p.terms()[0].op(), eta, part, &s.duals[0], p.terms()[0].alpha(), 1e-8));
        }
    }

    #[test]
    fn zero_weights_are_rejected() {
        let p = two_pixel(0.0);
        let s = tight().solve(&p, None).unwrap();
        let parts = classify_solution(&p, &s).unwrap();
        let err = solve_sensitivity_system(&p, &s, &parts, &[vec![1.0, 1.0]], LinearSolve::Auto).unwrap_err();
        assert!(matches!(err, Error::AssumptionViolated(_)));
    }
}
