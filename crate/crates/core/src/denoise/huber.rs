//! Huber-regularized lower-level problem, solved by semismooth Newton.

use super::{DenoiseProblem, DenoiseSolution, Residuals};
use crate::error::{Error, Result};
use crate::grid::{norm2, GradientField};
use crate::linalg::{axpy, dot, norm, norm_inf, pcg};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    pub gamma: f64,
}

impl HuberParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParam(format!("huber gamma must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

/// `||z||_gamma`
#[inline]
pub fn huber_norm(z: [f64; 2], gamma: f64) -> f64 {
    let nz = norm2(z);
    if nz >= 1.0 / gamma {
        nz - 0.5 / gamma
    } else {
        0.5 * gamma * nz * nz
    }
}

/// `h_gamma(z)`, the gradient of `||z||_gamma`.
#[inline]
pub fn huber_grad(z: [f64; 2], gamma: f64) -> [f64; 2] {
    let nz = norm2(z);
    if nz >= 1.0 / gamma {
        [z[0] / nz, z[1] / nz]
    } else {
        [gamma * z[0], gamma * z[1]]
    }
}

/// Generalized Hessian of `||z||_gamma` as `[[xx, xy], [xy, yy]]`.
#[inline]
pub fn huber_hess(z: [f64; 2], gamma: f64) -> [[f64; 2]; 2] {
    let nz = norm2(z);
    if nz >= 1.0 / gamma {
        let (nx, ny) = (z[0] / nz, z[1] / nz);
        [
            [(1.0 - nx * nx) / nz, -nx * ny / nz],
            [-nx * ny / nz, (1.0 - ny * ny) / nz],
        ]
    } else {
        [[gamma, 0.0], [0.0, gamma]]
    }
}

#[derive(Debug, Clone)]
pub struct HuberSolver {
    pub params: HuberParams,
    /// Bound on the sup-norm of the optimality residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl HuberSolver {
    pub fn new(gamma: f64, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParam("tolerance must be positive".into()));
        }
        Ok(Self {
            params: HuberParams::new(gamma)?,
            tol,
            max_iter: 200,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }

    /// `1/2 ||u - f||^2 + sum alpha ||K u||_gamma`
    pub fn energy(&self, problem: &DenoiseProblem, u: &[f64]) -> f64 {
        let g = self.gamma();
        let mut e: f64 = u
            .iter()
            .zip(problem.f().data())
            .map(|(a, b)| 0.5 * (a - b) * (a - b))
            .sum();
        for t in problem.terms() {
            for (j, &a) in t.alpha().iter().enumerate() {
                if a > 0.0 {
                    e += a * huber_norm(t.op().row(j, u), g);
                }
            }
        }
        e
    }

    /// `u - f + sum alpha K^T h_gamma(K u)`
    pub fn residual(&self, problem: &DenoiseProblem, u: &[f64]) -> Vec<f64> {
        let g = self.gamma();
        let mut r: Vec<f64> = u.iter().zip(problem.f().data()).map(|(a, b)| a - b).collect();
        for t in problem.terms() {
            let op = t.op();
            for (j, &a) in t.alpha().iter().enumerate() {
                if a > 0.0 {
                    op.add_row_transpose_at(j, huber_grad(op.row(j, u), g), a, &mut r);
                }
            }
        }
        r
    }

    /// Generalized Hessian blocks `alpha_j h'_gamma((K u)_j)` for every term.
    pub fn hessian_blocks(&self, problem: &DenoiseProblem, u: &[f64]) -> Vec<Vec<[[f64; 2]; 2]>> {
        let g = self.gamma();
        problem
            .terms()
            .iter()
            .map(|t| {
                t.alpha()
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| {
                        if a > 0.0 {
                            let h = huber_hess(t.op().row(j, u), g);
                            [[a * h[0][0], a * h[0][1]], [a * h[1][0], a * h[1][1]]]
                        } else {
                            [[0.0; 2]; 2]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn duals(&self, problem: &DenoiseProblem, u: &[f64]) -> Vec<GradientField> {
        let g = self.gamma();
        problem
            .terms()
            .iter()
            .map(|t| {
                GradientField::from_rows(
                    t.alpha()
                        .iter()
                        .enumerate()
                        .map(|(j, &a)| {
                            let h = huber_grad(t.op().row(j, u), g);
                            [a * h[0], a * h[1]]
                        })
                        .collect(),
                )
            })
            .collect()
    }

    pub fn solve(&self, problem: &DenoiseProblem, warm: Option<&DenoiseSolution>) -> Result<DenoiseSolution> {
        let n = problem.n();
        let mut u = match warm {
            Some(w) if w.u.shape() == problem.f().shape() => w.u.data().to_vec(),
            _ => problem.f().data().to_vec(),
        };
        let mut r = self.residual(problem, &u);
        let mut rnorm = norm_inf(&r);
        let mut energy = self.energy(problem, &u);
        let mut it = 0;
        while rnorm > self.tol {
            if it == self.max_iter {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residuals: Residuals {
                        stationarity: rnorm,
                        ..Residuals::default()
                    },
                });
            }
            it += 1;
            let blocks = self.hessian_blocks(problem, &u);
            let hv = |v: &[f64], out: &mut [f64]| apply_hessian(problem, &blocks, v, out);
            let diag = hessian_diag(problem, &blocks);
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let mut d = vec![0.0; n];
            let r2 = norm(&r);
            let forcing = r2.sqrt().clamp(1e-12, 0.1);
            let cg = pcg(hv, Some(&diag), &rhs, &mut d, forcing, 0.0, 5 * n + 100);
            if cg.breakdown || !d.iter().all(|v| v.is_finite()) {
                d = rhs.clone();
            }

            // Armijo on 1/2 ||r||^2, then on the energy
            let merit = 0.5 * r2 * r2;
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..30 {
                let mut trial = u.clone();
                axpy(step, &d, &mut trial);
                let tr = self.residual(problem, &trial);
                let tn = norm(&tr);
                if 0.5 * tn * tn <= (1.0 - 2e-4 * step) * merit {
                    next = Some((trial, tr));
                    break;
                }
                step *= 0.5;
            }
            if next.is_none() {
                let slope = dot(&r, &d);
                let d = if slope < 0.0 { d } else { rhs };
                let slope = dot(&r, &d);
                let mut step = 1.0;
                for _ in 0..60 {
                    let mut trial = u.clone();
                    axpy(step, &d, &mut trial);
                    let te = self.energy(problem, &trial);
                    if te <= energy + 1e-4 * step * slope {
                        let tr = self.residual(problem, &trial);
                        next = Some((trial, tr));
                        break;
                    }
                    step *= 0.5;
                }
            }
            let Some((nu, nr)) = next else {
                return Err(Error::NonConvergence {
                    iterations: it,
                    residuals: Residuals {
                        stationarity: rnorm,
                        ..Residuals::default()
                    },
                });
            };
            u = nu;
            r = nr;
            rnorm = norm_inf(&r);
            energy = self.energy(problem, &u);
        }
        let duals = self.duals(problem, &u);
        let dual_feasibility = problem
            .terms()
            .iter()
            .zip(&duals)
            .flat_map(|(t, q)| t.alpha().iter().zip(q.rows()).map(|(a, qj)| norm2(*qj) - a))
            .fold(0.0, f64::max);
        Ok(DenoiseSolution {
            u: problem.f().with_data(u)?,
            duals,
            residuals: Residuals {
                stationarity: rnorm,
                complementarity: 0.0,
                dual_feasibility,
            },
            iterations: it,
            step_ratio: 1.0,
        })
    }
}

/// `out = v + sum_i K_i^T B_i K_i v` for per-row 2x2 blocks `B_i`.
pub(crate) fn apply_hessian(problem: &DenoiseProblem, blocks: &[Vec<[[f64; 2]; 2]>], v: &[f64], out: &mut [f64]) {
    out.copy_from_slice(v);
    for (t, b) in problem.terms().iter().zip(blocks) {
        let op = t.op();
        for (j, bj) in b.iter().enumerate() {
            if bj[0][0] == 0.0 && bj[1][1] == 0.0 && bj[0][1] == 0.0 {
                continue;
            }
            let z = op.row(j, v);
            let w = [
                bj[0][0] * z[0] + bj[0][1] * z[1],
                bj[1][0] * z[0] + bj[1][1] * z[1],
            ];
            op.add_row_transpose_at(j, w, 1.0, out);
        }
    }
}

pub(crate) fn hessian_diag(problem: &DenoiseProblem, blocks: &[Vec<[[f64; 2]; 2]>]) -> Vec<f64> {
    let mut d = vec![1.0; problem.n()];
    for (t, b) in problem.terms().iter().zip(blocks) {
        for (j, bj) in b.iter().enumerate() {
            for (k, diff) in t.op().stencil(j).iter().enumerate() {
                if let Some(diff) = diff {
                    let v = diff.weight * diff.weight * bj[k][k];
                    d[diff.plus as usize] += v;
                    d[diff.minus as usize] += v;
                }
            }
        }
    }
    d
}

/// Minimizes the Huber-regularized energy to a residual of at most `tol`.
pub fn solve_tv_huber(problem: &DenoiseProblem, h: HuberParams, tol: f64, max_iter: usize) -> Result<DenoiseSolution> {
    let mut solver = HuberSolver::new(h.gamma, tol)?;
    solver.max_iter = max_iter;
    solver.solve(problem, None)
}
