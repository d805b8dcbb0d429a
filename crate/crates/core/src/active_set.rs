//! Index-set partition of a lower-level solution and the cone test built on it.

use std::fmt;

use crate::denoise::{DenoiseProblem, DenoiseSolution};
use crate::error::{Error, Result};
use crate::grid::{dot2, norm2, GradientField, GradientOperator};

/// Membership of one gradient row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetKind {
    /// `(K u)_j != 0`, `alpha_j > 0`
    Inactive,
    /// `(K u)_j = 0`, `||q_j|| < alpha_j`
    StronglyActive,
    /// `(K u)_j = 0`, `||q_j|| = alpha_j > 0`
    Biactive,
    /// `(K u)_j != 0`, `alpha_j = 0`
    ZeroInactive,
    /// `(K u)_j = 0`, `alpha_j = 0`
    Triactive,
}

impl SetKind {
    pub const ALL: [SetKind; 5] = [
        SetKind::Inactive,
        SetKind::StronglyActive,
        SetKind::Biactive,
        SetKind::ZeroInactive,
        SetKind::Triactive,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            SetKind::Inactive => "I",
            SetKind::StronglyActive => "As",
            SetKind::Biactive => "B",
            SetKind::ZeroInactive => "I0",
            SetKind::Triactive => "T",
        }
    }
}

/// Classification thresholds for gradient magnitudes and dual slack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub eps_x: f64,
    pub eps_a: f64,
}

impl Tolerances {
    /// `eps_x = 1e-6 (1 + max ||(K u)_j||)`, `eps_a = 1e-6 (1 + max alpha_j)`,
    /// with maxima taken over every term of the problem.
    pub fn relative(problem: &DenoiseProblem, u: &[f64]) -> Self {
        let mut gmax = 0.0f64;
        let mut amax = 0.0f64;
        for t in problem.terms() {
            for j in 0..t.op().n() {
                gmax = gmax.max(norm2(t.op().row(j, u)));
            }
            amax = t.alpha().iter().fold(amax, |m, &a| m.max(a));
        }
        Self {
            eps_x: 1e-6 * (1.0 + gmax),
            eps_a: 1e-6 * (1.0 + amax),
        }
    }
}

/// The five-set partition of the gradient rows of one operator, plus the
/// split of the biactive set into `B1` (treated as strongly active) and
/// `B2` (gradient constrained to the span of `q_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSetPartition {
    labels: Vec<SetKind>,
    b2: Vec<bool>,
    pub tolerances: Tolerances,
}

impl ActiveSetPartition {
    pub fn from_labels(labels: Vec<SetKind>, tolerances: Tolerances) -> Self {
        let b2 = vec![false; labels.len()];
        Self { labels, b2, tolerances }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn kind(&self, j: usize) -> SetKind {
        self.labels[j]
    }

    pub fn labels(&self) -> &[SetKind] {
        &self.labels
    }

    pub fn indices(&self, kind: SetKind) -> Vec<usize> {
        (0..self.labels.len()).filter(|&j| self.labels[j] == kind).collect()
    }

    pub fn count(&self, kind: SetKind) -> usize {
        self.labels.iter().filter(|&&k| k == kind).count()
    }

    pub fn inactive(&self) -> Vec<usize> {
        self.indices(SetKind::Inactive)
    }

    pub fn strongly_active(&self) -> Vec<usize> {
        self.indices(SetKind::StronglyActive)
    }

    pub fn biactive(&self) -> Vec<usize> {
        self.indices(SetKind::Biactive)
    }

    pub fn zero_inactive(&self) -> Vec<usize> {
        self.indices(SetKind::ZeroInactive)
    }

    pub fn triactive(&self) -> Vec<usize> {
        self.indices(SetKind::Triactive)
    }

    pub fn in_b2(&self, j: usize) -> bool {
        self.b2[j]
    }

    pub fn b1(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.labels[j] == SetKind::Biactive && !self.b2[j])
            .collect()
    }

    pub fn b2(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.b2[j]).collect()
    }

    /// Moves the given biactive rows to `B2`; every other row goes to `B1`.
    pub fn set_b2(&mut self, rows: &[usize]) -> Result<()> {
        self.b2.iter_mut().for_each(|b| *b = false);
        for &j in rows {
            if j >= self.len() || self.labels[j] != SetKind::Biactive {
                return Err(Error::InvalidParam(format!("row {j} is not biactive")));
            }
            self.b2[j] = true;
        }
        Ok(())
    }

    /// True when `B`, `I0` and `T` are all empty.
    pub fn is_strictly_complementary(&self) -> bool {
        self.labels
            .iter()
            .all(|k| matches!(k, SetKind::Inactive | SetKind::StronglyActive))
    }

    /// True when `I0` and `T` are empty.
    pub fn has_positive_weights(&self) -> bool {
        self.labels
            .iter()
            .all(|k| !matches!(k, SetKind::ZeroInactive | SetKind::Triactive))
    }
}

impl fmt::Display for ActiveSetPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = SetKind::ALL
            .iter()
            .map(|&k| format!("{}={}", k.symbol(), self.count(k)))
            .collect();
        write!(f, "{} (B2={})", parts.join(" "), self.b2().len())
    }
}

/// Assigns every gradient row of `op` to one of the five index sets.
///
/// A dual that overshoots its ball by more than `eps_a` but at most
/// `10 eps_a` is accepted and classified as biactive when `alpha_j > eps_a`.
pub fn classify(
    op: &GradientOperator,
    u: &[f64],
    q: &GradientField,
    alpha: &[f64],
    tol: Tolerances,
) -> Result<ActiveSetPartition> {
    let n = op.n();
    if u.len() != n || q.len() != n || alpha.len() != n {
        return Err(Error::Shape(format!(
            "classify: operator rows {n}, u {}, q {}, alpha {}",
            u.len(),
            q.len(),
            alpha.len()
        )));
    }
    let Tolerances { eps_x, eps_a } = tol;
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let a = alpha[j];
        let nq = q.row_norm(j);
        if nq > a + 10.0 * eps_a {
            return Err(Error::InfeasibleDual { index: j, excess: nq - a });
        }
        let nk = norm2(op.row(j, u));
        let kind = if nk > eps_x {
            if a > eps_a {
                SetKind::Inactive
            } else {
                SetKind::ZeroInactive
            }
        } else if nq < a - eps_a {
            SetKind::StronglyActive
        } else if a > eps_a {
            SetKind::Biactive
        } else {
            SetKind::Triactive
        };
        labels.push(kind);
    }
    Ok(ActiveSetPartition::from_labels(labels, tol))
}

/// Classifies every term of a solved problem with shared relative tolerances.
pub fn classify_solution(problem: &DenoiseProblem, sol: &DenoiseSolution) -> Result<Vec<ActiveSetPartition>> {
    let u = sol.u.data();
    let tol = Tolerances::relative(problem, u);
    problem
        .terms()
        .iter()
        .zip(&sol.duals)
        .map(|(t, q)| classify(t.op(), u, q, t.alpha(), tol))
        .collect()
}

/// Tests `v` for membership in the critical cone: `(K v)_j = 0` on the
/// strongly active set and `<q_j, (K v)_j> = alpha_j ||(K v)_j||` on the
/// biactive set, both up to `tol`.
pub fn cone_membership(
    op: &GradientOperator,
    v: &[f64],
    partition: &ActiveSetPartition,
    q: &GradientField,
    alpha: &[f64],
    tol: f64,
) -> bool {
    (0..op.n()).all(|j| match partition.kind(j) {
        SetKind::StronglyActive => norm2(op.row(j, v)) <= tol,
        SetKind::Biactive => {
            let z = op.row(j, v);
            (dot2(q.row(j), z) - alpha[j] * norm2(z)).abs() <= tol
        }
        _ => true,
    })
}
