//! Several TV terms with different difference schemes, each with its own
//! parameter field, learned jointly.

use std::sync::Arc;

use crate::adjoint::{Evaluator, GradientKind, ReducedEvaluation};
use crate::data::Dataset;
use crate::denoise::{DenoiseProblem, TvSolver, TvTerm};
use crate::error::{Error, Result};
use crate::grid::{GradientOperator, ImageGrid, Scheme};
use crate::param::{ParamField, ParamKind};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTermSpec {
    pub schemes: Vec<Scheme>,
    pub params: Vec<ParamField>,
    /// Require one parameter map (kind) for every term.
    pub shared_kind: bool,
}

impl MultiTermSpec {
    pub fn new(schemes: Vec<Scheme>, params: Vec<ParamField>, shared_kind: bool) -> Result<Self> {
        let spec = Self {
            schemes,
            params,
            shared_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Forward, backward and centered terms, all starting at `value`.
    pub fn three_schemes(kind: ParamKind, m1: usize, m2: usize, value: f64) -> Result<Self> {
        let p = ParamField::constant(kind, m1, m2, value)?;
        Self::new(Scheme::ALL.to_vec(), vec![p; 3], true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidParam("at least one scheme is required".into()));
        }
        if self.schemes.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} schemes but {} parameter fields",
                self.schemes.len(),
                self.params.len()
            )));
        }
        let shape = self.params[0].shape();
        if let Some(p) = self.params.iter().find(|p| p.shape() != shape) {
            return Err(Error::Shape(format!("parameter fields of shapes {shape:?} and {:?}", p.shape())));
        }
        if self.shared_kind && self.params.iter().any(|p| p.kind() != self.params[0].kind()) {
            return Err(Error::InvalidParam("shared_kind needs the same parameter kind on every term".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.schemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemes.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.params[0].shape()
    }

    pub fn operators(&self) -> Vec<Arc<GradientOperator>> {
        let (m1, m2) = self.shape();
        self.schemes
            .iter()
            .map(|&s| Arc::new(GradientOperator::new(m1, m2, s)))
            .collect()
    }

    /// Total number of dofs over all terms.
    pub fn dof_count(&self) -> usize {
        self.params.iter().map(ParamField::len).sum()
    }

    /// Same schemes with new concatenated dofs.
    pub fn with_dofs(&self, dofs: &[f64]) -> Result<Self> {
        if dofs.len() != self.dof_count() {
            return Err(Error::Shape(format!("{} dofs for a spec with {}", dofs.len(), self.dof_count())));
        }
        let mut at = 0;
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            params.push(p.with_dofs(dofs[at..at + p.len()].to_vec())?);
            at += p.len();
        }
        Self::new(self.schemes.clone(), params, self.shared_kind)
    }
}

pub fn build_multi_problem(f: &ImageGrid, spec: &MultiTermSpec) -> Result<DenoiseProblem> {
    spec.validate()?;
    if f.shape() != spec.shape() {
        return Err(Error::Shape(format!("image {:?} vs parameter fields {:?}", f.shape(), spec.shape())));
    }
    let terms = spec
        .operators()
        .into_iter()
        .zip(&spec.params)
        .map(|(op, p)| TvTerm::new(op, p.clone()))
        .collect::<Result<Vec<_>>>()?;
    DenoiseProblem::new(f.clone(), terms)
}

/// Evaluator over all terms of `spec`.
pub fn multi_evaluator(spec: &MultiTermSpec, dataset: Dataset, solver: TvSolver) -> Result<Evaluator> {
    spec.validate()?;
    if dataset.shape() != spec.shape() {
        return Err(Error::Shape(format!("images {:?} vs parameter fields {:?}", dataset.shape(), spec.shape())));
    }
    Evaluator::new(dataset, spec.operators(), solver)
}

/// Cost and gradient over all term dofs, concatenated in spec order.
pub fn multi_gradient(
    spec: &MultiTermSpec,
    dataset: &Dataset,
    kind: GradientKind,
    solver: &TvSolver,
) -> Result<ReducedEvaluation> {
    multi_evaluator(spec, dataset.clone(), solver.clone())?.evaluate(&spec.params, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::reduced_cost;
    use crate::data::{add_gaussian_noise, piecewise_smooth, TrainingPair};

    fn dataset(m: usize, seed: u64) -> Dataset {
        let clean = piecewise_smooth(m, m);
        let noisy = add_gaussian_noise(&clean, 0.05, seed).unwrap();
        Dataset::train(vec![TrainingPair::new(clean, noisy, "a").unwrap()]).unwrap()
    }

    fn solver() -> TvSolver {
        TvSolver::with_tol(1e-10)
    }

    #[test]
    fn spec_validation() {
        let p = ParamField::scalar(4, 4, 0.1).unwrap();
        assert!(MultiTermSpec::new(vec![], vec![], false).is_err());
        assert!(MultiTermSpec::new(vec![Scheme::Forward], vec![p.clone(), p.clone()], false).is_err());
        let pp = ParamField::constant(ParamKind::PerPixel, 4, 4, 0.1).unwrap();
        assert!(MultiTermSpec::new(vec![Scheme::Forward, Scheme::Backward], vec![p.clone(), pp.clone()], true).is_err());
        assert!(MultiTermSpec::new(vec![Scheme::Forward, Scheme::Backward], vec![p, pp], false).is_ok());
        let s = MultiTermSpec::three_schemes(ParamKind::Scalar, 4, 4, 0.0).unwrap();
        assert_eq!(s.schemes, Scheme::ALL.to_vec());
    }

    #[test]
    fn singleton_spec_is_the_single_term_problem() {
        let ds = dataset(8, 1);
        let p = ParamField::scalar(8, 8, 0.05).unwrap();
        let spec = MultiTermSpec::new(vec![Scheme::Forward], vec![p.clone()], false).unwrap();
        let op = Arc::new(GradientOperator::new(8, 8, Scheme::Forward));
        let single = DenoiseProblem::single(ds.pairs()[0].noisy.clone(), op.clone(), p.clone()).unwrap();
        let multi = build_multi_problem(&ds.pairs()[0].noisy, &spec).unwrap();
        let a = solver().solve(&single, None).unwrap();
        let b = solver().solve(&multi, None).unwrap();
        assert_eq!(a.u, b.u);

        let mut ev = Evaluator::new(ds.clone(), vec![op], solver()).unwrap();
        let want = ev.bouligand(std::slice::from_ref(&p)).unwrap();
        let got = multi_gradient(&spec, &ds, GradientKind::Bouligand, &solver()).unwrap();
        assert_eq!(want.gradient, got.gradient);
        assert_eq!(want.cost, got.cost);
    }

    #[test]
    fn vanishing_terms_reduce_to_forward_only() {
        let ds = dataset(8, 2);
        let a = 0.04;
        let tol = 1e-10;
        let spec = MultiTermSpec::new(
            Scheme::ALL.to_vec(),
            vec![
                ParamField::scalar(8, 8, a).unwrap(),
                ParamField::scalar(8, 8, 0.0).unwrap(),
                ParamField::scalar(8, 8, 0.0).unwrap(),
            ],
            true,
        )
        .unwrap();
        let op = Arc::new(GradientOperator::new(8, 8, Scheme::Forward));
        let single = reduced_cost(&ParamField::scalar(8, 8, a).unwrap(), op, &ds, &TvSolver::with_tol(tol)).unwrap();
        let multi = multi_gradient(&spec, &ds, GradientKind::Bouligand, &TvSolver::with_tol(tol)).unwrap();
        let du = single.solutions[0]
            .u
            .data()
            .iter()
            .zip(multi.solutions[0].u.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(du <= 10.0 * tol, "{du}");
        assert!((single.cost - multi.cost).abs() <= 10.0 * tol * (1.0 + single.cost));
        let mut ev = Evaluator::new(ds, vec![Arc::new(GradientOperator::new(8, 8, Scheme::Forward))], TvSolver::with_tol(tol)).unwrap();
        let g1 = ev.bouligand(&[ParamField::scalar(8, 8, a).unwrap()]).unwrap().gradient.unwrap();
        let g = multi.gradient.unwrap();
        assert!((g[0] - g1[0]).abs() <= 10.0 * tol * (1.0 + g1[0].abs()), "{g:?} {g1:?}");
    }

    #[test]
    fn split_weight_on_one_scheme_matches_the_whole() {
        let ds = dataset(8, 3);
        let a = 0.06;
        let third = ParamField::scalar(8, 8, a / 3.0).unwrap();
        let spec = MultiTermSpec::new(vec![Scheme::Centered; 3], vec![third; 3], true).unwrap();
        let f = &ds.pairs()[0].noisy;
        let op = Arc::new(GradientOperator::new(8, 8, Scheme::Centered));
        let whole = DenoiseProblem::single(f.clone(), op, ParamField::scalar(8, 8, a).unwrap()).unwrap();
        let split = build_multi_problem(f, &spec).unwrap();
        let x = solver().solve(&whole, None).unwrap();
        let y = solver().solve(&split, None).unwrap();
        let du = x.u.data().iter().zip(y.u.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(du <= 1e-8, "{du}");
    }

    #[test]
    fn huber_gradient_matches_central_differences() {
        let ds = dataset(8, 4);
        let kind = ParamKind::Patch { p1: 2, p2: 2 };
        let spec = MultiTermSpec::new(
            Scheme::ALL.to_vec(),
            vec![
                ParamField::constant(kind, 8, 8, 0.03).unwrap(),
                ParamField::constant(kind, 8, 8, 0.02).unwrap(),
                ParamField::constant(kind, 8, 8, 0.01).unwrap(),
            ],
            true,
        )
        .unwrap();
        let gamma = 100.0;
        let mut ev = multi_evaluator(&spec, ds, solver()).unwrap();
        ev.huber_tol = 1e-13;
        let g = ev.huber(&spec.params, gamma).unwrap().gradient.unwrap();
        let base: Vec<f64> = spec.params.iter().flat_map(|p| p.dofs().to_vec()).collect();
        let h = 1e-5;
        for k in [0, 3, 5, 10] {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let cp = ev.huber(&spec.with_dofs(&plus).unwrap().params, gamma).unwrap().cost;
            let cm = ev.huber(&spec.with_dofs(&minus).unwrap().params, gamma).unwrap().cost;
            let fd = (cp - cm) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1e-3), "dof {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn permuting_terms_permutes_gradient_blocks() {
        let ds = dataset(8, 5);
        let params = vec![
            ParamField::scalar(8, 8, 0.03).unwrap(),
            ParamField::scalar(8, 8, 0.02).unwrap(),
            ParamField::scalar(8, 8, 0.01).unwrap(),
        ];
        let spec = MultiTermSpec::new(Scheme::ALL.to_vec(), params.clone(), true).unwrap();
        let order = [2, 0, 1];
        let permuted = MultiTermSpec::new(
            order.iter().map(|&i| Scheme::ALL[i]).collect(),
            order.iter().map(|&i| params[i].clone()).collect(),
            true,
        )
        .unwrap();
        let kind = GradientKind::Huber(100.0);
        let g = multi_gradient(&spec, &ds, kind, &solver()).unwrap().gradient.unwrap();
        let gp = multi_gradient(&permuted, &ds, kind, &solver()).unwrap().gradient.unwrap();
        for (slot, &i) in order.iter().enumerate() {
            assert!((gp[slot] - g[i]).abs() <= 1e-8 * (1.0 + g[i].abs()), "{gp:?} {g:?}");
        }
    }

    #[test]
    fn clean_data_gives_zero_gradient() {
        let img = piecewise_smooth(8, 8);
        let ds = Dataset::train(vec![TrainingPair::new(img.clone(), img, "c").unwrap()]).unwrap();
        let spec = MultiTermSpec::three_schemes(ParamKind::Scalar, 8, 8, 0.0).unwrap();
        for kind in [GradientKind::Bouligand, GradientKind::Huber(100.0)] {
            let r = multi_gradient(&spec, &ds, kind, &solver()).unwrap();
            assert_eq!(r.gradient.unwrap(), vec![0.0; 3]);
        }
    }
}
