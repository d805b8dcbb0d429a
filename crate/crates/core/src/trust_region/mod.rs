//! Nonsmooth trust-region method for the bilevel problem. Radii at or above
//! a threshold use the Bouligand gradient; below it, the gradient of the
//! Huber-smoothed problem. The model Hessian is an L-BFGS matrix and steps
//! come from a box-constrained dogleg that keeps `alpha >= 0`.

mod dogleg;
mod lbfgs;

use std::fmt;
use std::io::Write;

pub use dogleg::{dogleg_step, model_decrease, DoglegCase, DoglegStep};
pub use lbfgs::Lbfgs;

use crate::adjoint::{Evaluator, GradientKind};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::param::ParamField;

#[derive(Debug, Clone, PartialEq)]
pub struct TRConfig {
    pub delta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Radius below which the Huber gradient is used.
    pub delta_t: f64,
    /// Terminal radius.
    pub tol: f64,
    pub max_iter: usize,
    pub lbfgs_memory: usize,
    pub delta_max: f64,
    pub huber_gamma: f64,
    pub grow_factor: f64,
    /// Drop the curvature pairs when switching to the Huber gradient.
    pub reset_memory_on_switch: bool,
}

impl Default for TRConfig {
    fn default() -> Self {
        Self {
            delta0: 1.0,
            eta1: 0.1,
            eta2: 0.75,
            gamma1: 0.25,
            gamma2: 0.5,
            delta_t: 1e-3,
            tol: 1e-6,
            max_iter: 200,
            lbfgs_memory: 10,
            delta_max: 1e3,
            huber_gamma: 1e3,
            grow_factor: 2.0,
            reset_memory_on_switch: false,
        }
    }
}

impl TRConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if !(0.0 < self.eta1 && self.eta1 <= self.eta2 && self.eta2 < 1.0) {
            return bad("need 0 < eta1 <= eta2 < 1");
        }
        if !(0.0 < self.gamma1 && self.gamma1 <= self.gamma2 && self.gamma2 < 1.0) {
            return bad("need 0 < gamma1 <= gamma2 < 1");
        }
        if !(0.0 < self.tol && self.tol < self.delta_t && self.delta_t <= self.delta0 && self.delta0 <= self.delta_max) {
            return bad("need 0 < tol < delta_t <= delta0 <= delta_max");
        }
        if !self.delta_max.is_finite() {
            return bad("delta_max must be finite");
        }
        if !(self.grow_factor >= 1.0) {
            return bad("grow_factor must be at least 1");
        }
        if !(self.huber_gamma > 0.0) || !self.huber_gamma.is_finite() {
            return bad("huber_gamma must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bouligand,
    Regularized,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Bouligand => "bouligand",
            Phase::Regularized => "huber",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub phase: Phase,
    pub cost: f64,
    pub grad_norm: f64,
    pub delta: f64,
    pub rho: f64,
    pub accepted: bool,
    pub step_norm: f64,
    /// Smallest dof of the iterate the step starts from.
    pub alpha_min: f64,
}

pub const TRACE_HEADER: &str = "k,phase,cost,grad_norm,delta,rho,accepted,step_norm";

pub fn write_trace_csv(mut w: impl Write, trace: &[TraceRecord]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.k,
            r.phase,
            r.cost,
            r.grad_norm,
            r.delta,
            r.rho,
            u8::from(r.accepted),
            r.step_norm
        )?;
    }
    w.flush()?;
    Ok(())
}

/// `(cost_old - cost_new) / (model_old - model_new)`, or `-inf` when the
/// predicted decrease is below `1e-15 (1 + |cost_old|)`.
pub fn quality_ratio(cost_old: f64, cost_new: f64, model_old: f64, model_new: f64) -> f64 {
    let predicted = model_old - model_new;
    if !(predicted >= 1e-15 * (1.0 + cost_old.abs())) {
        return f64::NEG_INFINITY;
    }
    (cost_old - cost_new) / predicted
}

/// Loop state: the iterate as concatenated dofs of every term.
#[derive(Debug, Clone)]
pub struct TrustRegionState {
    pub alpha: Vec<f64>,
    pub cost: f64,
    pub gradient: Vec<f64>,
    pub gradient_phase: Phase,
    pub delta: f64,
    pub model: Lbfgs,
    pub k: usize,
    pub trace: Vec<TraceRecord>,
}

impl TrustRegionState {
    pub fn phase(&self, config: &TRConfig) -> Phase {
        phase_for(self.delta, config)
    }
}

fn phase_for(delta: f64, config: &TRConfig) -> Phase {
    if delta >= config.delta_t {
        Phase::Bouligand
    } else {
        Phase::Regularized
    }
}

#[derive(Debug, Clone)]
pub struct TrustRegionResult {
    pub alpha: Vec<ParamField>,
    pub cost: f64,
    pub trace: Vec<TraceRecord>,
    pub accepted: usize,
    /// Lower-level solves spent by the run.
    pub solves: usize,
}

fn split(templates: &[ParamField], dofs: &[f64]) -> Result<Vec<ParamField>> {
    let mut out = Vec::with_capacity(templates.len());
    let mut at = 0;
    for t in templates {
        out.push(t.with_dofs(dofs[at..at + t.len()].to_vec())?);
        at += t.len();
    }
    Ok(out)
}

fn gradient_at(ev: &mut Evaluator, params: &[ParamField], phase: Phase, config: &TRConfig) -> Result<(Vec<f64>, Phase)> {
    let kind = match phase {
        Phase::Bouligand => GradientKind::Bouligand,
        Phase::Regularized => GradientKind::Huber(config.huber_gamma),
    };
    match ev.evaluate(params, kind) {
        Ok(r) => Ok((r.gradient.unwrap_or_default(), phase)),
        Err(e) if phase == Phase::Bouligand && matches!(e.root(), Error::AssumptionViolated(_) | Error::SingularSystem(_)) => {
            log::warn!("Bouligand gradient unavailable ({e}); using the Huber gradient");
            let r = ev.evaluate(params, GradientKind::Huber(config.huber_gamma))?;
            Ok((r.gradient.unwrap_or_default(), Phase::Regularized))
        }
        Err(e) => Err(e),
    }
}

/// Runs the trust-region method from `alpha0` (one field per operator of
/// the evaluator) until the radius falls to `config.tol`.
pub fn run(ev: &mut Evaluator, alpha0: &[ParamField], config: &TRConfig) -> Result<TrustRegionResult> {
    config.validate()?;
    let templates = alpha0.to_vec();
    let solves0 = ev.solves();
    let alpha: Vec<f64> = alpha0.iter().flat_map(|p| p.dofs().iter().copied()).collect();
    let cost = ev.cost(alpha0)?.cost;
    let phase = phase_for(config.delta0, config);
    let (gradient, gradient_phase) = gradient_at(ev, alpha0, phase, config)?;
    let mut st = TrustRegionState {
        alpha,
        cost,
        gradient,
        gradient_phase,
        delta: config.delta0,
        model: Lbfgs::new(config.lbfgs_memory),
        k: 0,
        trace: Vec::new(),
    };
    let mut accepted_steps = 0;
    while st.delta > config.tol {
        if st.k == config.max_iter {
            let partial = TrustRegionResult {
                alpha: split(&templates, &st.alpha)?,
                cost: st.cost,
                trace: st.trace,
                accepted: accepted_steps,
                solves: ev.solves() - solves0,
            };
            return Err(Error::MaxIterations {
                iterations: st.k,
                partial: Box::new(partial),
            });
        }
        let step = dogleg_step(&st.gradient, &st.model, st.delta, &st.alpha);
        let step_norm = norm(&step.step);
        let trial: Vec<f64> = st
            .alpha
            .iter()
            .zip(&step.step)
            .map(|(a, s)| (a + s).max(0.0))
            .collect();
        let mut trial_cost = f64::NAN;
        let rho = if step_norm == 0.0 {
            f64::NEG_INFINITY
        } else {
            match ev.cost(&split(&templates, &trial)?) {
                Ok(e) => {
                    trial_cost = e.cost;
                    quality_ratio(st.cost, trial_cost, 0.0, -step.predicted)
                }
                Err(e) if matches!(e.root(), Error::NonConvergence { .. }) => {
                    log::warn!("trial point rejected at k = {}: {e}", st.k);
                    f64::NEG_INFINITY
                }
                Err(e) => return Err(e),
            }
        };
        let accepted = rho > config.eta1;
        st.trace.push(TraceRecord {
            k: st.k,
            phase: st.gradient_phase,
            cost: st.cost,
            grad_norm: norm(&st.gradient),
            delta: st.delta,
            rho,
            accepted,
            step_norm,
            alpha_min: st.alpha.iter().copied().fold(f64::INFINITY, f64::min),
        });
        st.delta = if rho >= config.eta2 {
            (config.grow_factor * st.delta).min(config.delta_max)
        } else if rho > config.eta1 {
            config.gamma2 * st.delta
        } else {
            config.gamma1 * st.delta
        };
        let next_phase = phase_for(st.delta, config);
        if next_phase == Phase::Regularized && st.gradient_phase == Phase::Bouligand && config.reset_memory_on_switch {
            st.model.clear();
        }
        if accepted {
            let params = split(&templates, &trial)?;
            let (g_new, phase_new) = if st.delta > config.tol {
                gradient_at(ev, &params, next_phase, config)?
            } else {
                (st.gradient.clone(), st.gradient_phase)
            };
            if phase_new == st.gradient_phase && st.delta > config.tol {
                let s: Vec<f64> = trial.iter().zip(&st.alpha).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&st.gradient).map(|(a, b)| a - b).collect();
                if !st.model.update(&s, &y) {
                    log::debug!("curvature pair skipped at k = {} (s^T y = {:.3e})", st.k, dot(&s, &y));
                }
            }
            st.alpha = trial;
            st.cost = trial_cost;
            st.gradient = g_new;
            st.gradient_phase = phase_new;
            accepted_steps += 1;
        } else if next_phase != st.gradient_phase && next_phase == Phase::Regularized && st.delta > config.tol {
            let (g, p) = gradient_at(ev, &split(&templates, &st.alpha)?, next_phase, config)?;
            st.gradient = g;
            st.gradient_phase = p;
        }
        st.k += 1;
    }
    Ok(TrustRegionResult {
        alpha: split(&templates, &st.alpha)?,
        cost: st.cost,
        trace: st.trace,
        accepted: accepted_steps,
        solves: ev.solves() - solves0,
    })
}
