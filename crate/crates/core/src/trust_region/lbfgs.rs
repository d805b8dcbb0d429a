//! Limited-memory BFGS curvature pairs with inverse (two-loop) and direct
//! (compact form) products.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{dot, norm};

const CURVATURE_SAFEGUARD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Lbfgs {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Lbfgs {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` unless `<s, y> <= 1e-10 ||s|| ||y||`. Returns whether
    /// the pair was kept.
    pub fn update(&mut self, s: &[f64], y: &[f64]) -> bool {
        if self.capacity == 0 || s.len() != y.len() {
            return false;
        }
        let sy = dot(s, y);
        if !(sy > CURVATURE_SAFEGUARD * norm(s) * norm(y)) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.to_vec(), y.to_vec()));
        true
    }

    /// `B0 = delta I` with `delta = <y, y> / <s, y>` from the newest pair.
    fn initial_scale(&self) -> f64 {
        match self.pairs.back() {
            Some((s, y)) => dot(y, y) / dot(s, y),
            None => 1.0,
        }
    }

    /// `H v = B^{-1} v`
    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        let mut q = v.to_vec();
        let mut a = vec![0.0; self.pairs.len()];
        for (i, (s, y)) in self.pairs.iter().enumerate().rev() {
            a[i] = dot(s, &q) / dot(s, y);
            q.iter_mut().zip(y).for_each(|(qk, yk)| *qk -= a[i] * yk);
        }
        let h0 = 1.0 / self.initial_scale();
        q.iter_mut().for_each(|x| *x *= h0);
        for (i, (s, y)) in self.pairs.iter().enumerate() {
            let b = dot(y, &q) / dot(s, y);
            q.iter_mut().zip(s).for_each(|(qk, sk)| *qk += (a[i] - b) * sk);
        }
        q
    }

    /// `B v` from `B = delta I - W M^{-1} W^T`, `W = [delta S, Y]`,
    /// `M = [[delta S^T S, L], [L^T, -D]]`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let delta = self.initial_scale();
        let m = self.pairs.len();
        let mut out: Vec<f64> = v.iter().map(|x| delta * x).collect();
        if m == 0 {
            return out;
        }
        let mut mid = DMatrix::zeros(2 * m, 2 * m);
        for (i, (si, yi)) in self.pairs.iter().enumerate() {
            for (j, (sj, _)) in self.pairs.iter().enumerate() {
                mid[(i, j)] = delta * dot(si, sj);
                if i > j {
                    let l = dot(si, &self.pairs[j].1);
                    mid[(i, m + j)] = l;
                    mid[(m + j, i)] = l;
                }
            }
            mid[(m + i, m + i)] = -dot(si, yi);
        }
        let mut w = DVector::zeros(2 * m);
        for (i, (s, y)) in self.pairs.iter().enumerate() {
            w[i] = delta * dot(s, v);
            w[m + i] = dot(y, v);
        }
        let Some(c) = mid.lu().solve(&w) else {
            return out;
        };
        for (i, (s, y)) in self.pairs.iter().enumerate() {
            for k in 0..v.len() {
                out[k] -= delta * s[k] * c[i] + y[k] * c[m + i];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};
    use proptest::prelude::*;

    #[test]
    fn empty_memory_is_identity() {
        let l = Lbfgs::new(5);
        assert_eq!(l.apply_inverse(&[1.0, -2.0]), vec![1.0, -2.0]);
        assert_eq!(l.apply(&[1.0, -2.0]), vec![1.0, -2.0]);
    }

    #[test]
    fn unit_pair_acts_as_identity_on_it() {
        let mut l = Lbfgs::new(5);
        assert!(l.update(&[1.0, 0.0], &[1.0, 0.0]));
        assert_eq!(l.apply(&[1.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(l.apply_inverse(&[1.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn secant_equation_holds_for_newest_pair() {
        let mut l = Lbfgs::new(5);
        l.update(&[1.0, 0.0], &[1.0, 0.0]);
        l.update(&[0.0, 1.0], &[0.0, 100.0]);
        let bs = l.apply(&[0.0, 1.0]);
        assert!((bs[0]).abs() < 1e-12 && (bs[1] - 100.0).abs() < 1e-12);
        let hy = l.apply_inverse(&[0.0, 100.0]);
        assert!(hy[0].abs() < 1e-12 && (hy[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_safeguard_skips() {
        let mut l = Lbfgs::new(3);
        assert!(!l.update(&[1.0, 0.0], &[-1.0, 0.0]));
        assert!(!l.update(&[1.0, 0.0], &[0.0, 1.0]));
        assert!(l.is_empty());
    }

    #[test]
    fn capacity_drops_oldest() {
        let mut l = Lbfgs::new(2);
        for k in 1..=3 {
            l.update(&[k as f64, 1.0], &[k as f64, 2.0]);
        }
        assert_eq!(l.len(), 2);
    }

    fn spd_pairs(seed: u64, n: usize, m: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut next = || rng.random_range(-0.5..0.5);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next()).collect()).collect();
        // A^T A + I
        let mat: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let ss: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| next()).collect()).collect();
        let ys = ss
            .iter()
            .map(|s| (0..n).map(|i| dot(&mat[i], s)).collect())
            .collect();
        (ss, ys)
    }

    proptest! {
        #[test]
        fn inverse_and_direct_products_agree(seed in 0u64..10_000, n in 2usize..8) {
            let (ss, ys) = spd_pairs(seed, n, 5);
            let mut l = Lbfgs::new(10);
            for (s, y) in ss.iter().zip(&ys) {
                l.update(s, y);
            }
            let v: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0).sin()).collect();
            let back = l.apply_inverse(&l.apply(&v));
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{:?} {:?}", back, v);
            }
        }

        #[test]
        fn model_is_positive_definite(seed in 0u64..10_000, n in 2usize..8) {
            let (ss, ys) = spd_pairs(seed, n, 4);
            let mut l = Lbfgs::new(3);
            for (s, y) in ss.iter().zip(&ys) {
                l.update(s, y);
            }
            let v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
            prop_assert!(dot(&v, &l.apply(&v)) > 0.0);
            prop_assert!(dot(&v, &l.apply_inverse(&v)) > 0.0);
        }
    }
}
