//! Dogleg step for the box `max(-alpha_j, -delta) <= s_j <= delta`.

use super::lbfgs::Lbfgs;
use crate::linalg::{dot, norm};

/// Which branch produced the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoglegCase {
    Newton,
    Dogleg,
    ScaledCauchy,
    /// `g^T B g <= 0`: steepest descent to the box boundary.
    DegenerateModel,
    /// No feasible descent direction.
    Zero,
}

#[derive(Debug, Clone)]
pub struct DoglegStep {
    pub step: Vec<f64>,
    pub case: DoglegCase,
    /// `m(0) - m(s) = -(g^T s + 1/2 s^T B s)`
    pub predicted: f64,
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn contains(&self, s: &[f64]) -> bool {
        s.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Largest `t` in `[0, t_max]` with `base + t d` inside.
    fn max_step(&self, base: &[f64], d: &[f64], t_max: f64) -> f64 {
        let mut t = t_max;
        for k in 0..d.len() {
            if d[k] > 0.0 {
                t = t.min((self.hi[k] - base[k]) / d[k]);
            } else if d[k] < 0.0 {
                t = t.min((self.lo[k] - base[k]) / d[k]);
            }
        }
        t.max(0.0)
    }

    fn clamp(&self, s: &mut [f64]) {
        for k in 0..s.len() {
            s[k] = s[k].clamp(self.lo[k], self.hi[k]);
        }
    }
}

/// `m(0) - m(s)` for the model `g^T s + 1/2 s^T B s`.
pub fn model_decrease(g: &[f64], model: &Lbfgs, s: &[f64]) -> f64 {
    -(dot(g, s) + 0.5 * dot(s, &model.apply(s)))
}

/// Box-constrained dogleg step. Variables sitting on their lower bound
/// (`alpha_j = 0`) whose gradient points out of the box are held fixed.
pub fn dogleg_step(g: &[f64], model: &Lbfgs, delta: f64, alpha: &[f64]) -> DoglegStep {
    let n = g.len();
    let bounds = Bounds {
        lo: alpha.iter().map(|a| (-a).max(-delta)).collect(),
        hi: vec![delta; n],
    };
    let gf: Vec<f64> = g
        .iter()
        .zip(alpha)
        .map(|(&gj, &a)| if a <= 0.0 && gj > 0.0 { 0.0 } else { gj })
        .collect();
    let finish = |mut step: Vec<f64>, case: DoglegCase| {
        bounds.clamp(&mut step);
        let predicted = model_decrease(g, model, &step);
        DoglegStep { step, case, predicted }
    };
    let gnorm = norm(&gf);
    if gnorm == 0.0 {
        return finish(vec![0.0; n], DoglegCase::Zero);
    }
    let descent: Vec<f64> = gf.iter().map(|v| -v).collect();
    let to_boundary = |case| {
        let t = bounds.max_step(&vec![0.0; n], &descent, f64::INFINITY);
        let s: Vec<f64> = descent.iter().map(|d| t * d).collect();
        finish(s, case)
    };

    let bg = model.apply(&gf);
    let curv = dot(&gf, &bg);
    if !(curv > 0.0) {
        return to_boundary(DoglegCase::DegenerateModel);
    }

    let mut newton: Vec<f64> = model.apply_inverse(&gf).iter().map(|v| -v).collect();
    for (s, (&gj, &gfj)) in newton.iter_mut().zip(g.iter().zip(&gf)) {
        if gj != gfj {
            *s = 0.0;
        }
    }
    let newton_ok = model_decrease(&gf, model, &newton) > 0.0;
    if newton_ok && bounds.contains(&newton) {
        return finish(newton, DoglegCase::Newton);
    }

    let tc = gnorm * gnorm / curv;
    let cauchy: Vec<f64> = descent.iter().map(|d| tc * d).collect();
    if !bounds.contains(&cauchy) {
        let t = bounds.max_step(&vec![0.0; n], &descent, tc);
        let s: Vec<f64> = descent.iter().map(|d| t * d).collect();
        return finish(s, DoglegCase::ScaledCauchy);
    }
    if !newton_ok {
        return finish(cauchy, DoglegCase::ScaledCauchy);
    }
    let dir: Vec<f64> = newton.iter().zip(&cauchy).map(|(a, b)| a - b).collect();
    let tau = bounds.max_step(&cauchy, &dir, 1.0);
    let s: Vec<f64> = cauchy.iter().zip(&dir).map(|(c, d)| c + tau * d).collect();
    let candidate = finish(s, DoglegCase::Dogleg);
    let cauchy_step = finish(cauchy, DoglegCase::ScaledCauchy);
    if candidate.predicted >= cauchy_step.predicted {
        candidate
    } else {
        cauchy_step
    }
}
