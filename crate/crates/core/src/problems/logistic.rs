use crate::ingest::Dataset;
use crate::numeric::{KahanSum, KahanVec};

use super::{Objective, ProblemError, Smoothness, WeightVector};

/// `log(1 + exp(z))` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression with components
/// `f_i(w) = log(1 + exp(-y_i x_i^T w)) + (lambda/2) ||w||^2`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    data: Dataset,
    lambda: f64,
    smoothness: f64,
}

impl LogisticProblem {
    pub fn new(data: Dataset, lambda: f64) -> Result<Self, ProblemError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("lambda = {lambda}")));
        }
        let smoothness = 0.25 * data.max_row_norm_sq() + lambda;
        Ok(Self { data, lambda, smoothness })
    }

    /// Uses `lambda = 1/n`.
    pub fn with_default_lambda(data: Dataset) -> Self {
        let lambda = 1.0 / data.n() as f64;
        Self::new(data, lambda).expect("1/n is a valid penalty")
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Fraction of examples with `y_i x_i^T w > 0`.
    pub fn accuracy(&self, w: &[f64]) -> f64 {
        let hits = self
            .data
            .examples()
            .iter()
            .filter(|ex| ex.label * ex.dot(w) > 0.0)
            .count();
        hits as f64 / self.data.n() as f64
    }

    fn reg_value(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * w.iter().map(|x| x * x).collect::<KahanSum>().value()
    }
}

impl Objective for LogisticProblem {
    fn name(&self) -> &str {
        "logistic"
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn component_value_at(&self, i: usize, w: &[f64]) -> f64 {
        let ex = &self.data.examples()[i];
        softplus(-ex.label * ex.dot(w)) + self.reg_value(w)
    }

    fn add_component_grad(&self, i: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        let ex = &self.data.examples()[i];
        let coef = -ex.label * sigmoid(-ex.label * ex.dot(w)) * scale;
        for &(j, v) in &ex.features {
            out[j] += coef * v;
        }
        if self.lambda != 0.0 {
            let r = self.lambda * scale;
            for (o, x) in out.iter_mut().zip(w) {
                *o += r * x;
            }
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::exact(self.smoothness)
    }

    fn strong_convexity(&self) -> Option<f64> {
        (self.lambda > 0.0).then_some(self.lambda)
    }

    fn full_value(&self, w: &[f64]) -> f64 {
        let loss = self
            .data
            .examples()
            .iter()
            .map(|ex| softplus(-ex.label * ex.dot(w)))
            .collect::<KahanSum>()
            .value();
        loss / self.n() as f64 + self.reg_value(w)
    }

    fn full_grad(&self, w: &[f64]) -> WeightVector {
        let mut acc = KahanVec::zeros(self.dim());
        for ex in self.data.examples() {
            let coef = -ex.label * sigmoid(-ex.label * ex.dot(w));
            for &(j, v) in &ex.features {
                acc.add_coord(j, coef * v);
            }
        }
        let inv_n = 1.0 / self.n() as f64;
        let g: Vec<f64> = acc
            .into_vec()
            .into_iter()
            .zip(w)
            .map(|(s, x)| s * inv_n + self.lambda * x)
            .collect();
        g.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_libsvm, ParseOptions};

    fn hand() -> LogisticProblem {
        let ds = parse_libsvm(
            "1 1:1 2:2\n-1 1:0.5 3:-1\n1 2:-1.5 3:0.25".as_bytes(),
            &ParseOptions::default(),
        )
        .unwrap();
        LogisticProblem::new(ds, 0.1).unwrap()
    }

    #[test]
    fn origin_values() {
        let p = hand();
        let w = vec![0.0; 3];
        for i in 0..3 {
            assert!((p.component_value(i, &w).unwrap() - 2f64.ln()).abs() < 1e-15);
            let g = p.component_grad(i, &w).unwrap();
            let ex = &p.dataset().examples()[i];
            let mut expect = vec![0.0; 3];
            for &(j, v) in &ex.features {
                expect[j] = -ex.label * 0.5 * v;
            }
            assert_eq!(&g[..], &expect[..]);
        }
        let ds = p.dataset().clone();
        let q = LogisticProblem::with_default_lambda(ds);
        assert!((q.full_value(&w) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn smoothness_formula() {
        let ds = parse_libsvm("1 1:2\n-1 2:2".as_bytes(), &ParseOptions::default()).unwrap();
        let p = LogisticProblem::new(ds, 0.01).unwrap();
        assert!((p.smoothness().value - 1.01).abs() < 1e-15);
        assert!(!p.smoothness().estimated);
        assert_eq!(p.strong_convexity(), Some(0.01));

        let one = parse_libsvm("1 1:2 2:0".as_bytes(), &ParseOptions::default()).unwrap();
        let p = LogisticProblem::new(one, 0.3).unwrap();
        assert!((p.smoothness().value - 1.3).abs() < 1e-15);
    }

    #[test]
    fn extreme_margins_do_not_overflow() {
        let ds = parse_libsvm("1 1:1\n-1 1:1".as_bytes(), &ParseOptions::default()).unwrap();
        let p = LogisticProblem::new(ds, 0.0).unwrap();
        let w = [1e4];
        let v0 = p.component_value(0, &w).unwrap();
        let v1 = p.component_value(1, &w).unwrap();
        assert!(v0 >= 0.0 && v0 < 1e-300);
        assert_eq!(v1, 1e4);
        let g1 = p.component_grad(1, &w).unwrap();
        assert_eq!(g1[0], 1.0);
    }

    #[test]
    fn checked_access() {
        let p = hand();
        assert_eq!(
            p.component_value(3, &[0.0; 3]),
            Err(ProblemError::IndexOutOfRange { index: 3, n: 3 })
        );
        assert!(matches!(
            p.component_grad(0, &[0.0; 2]),
            Err(ProblemError::DimensionMismatch { .. })
        ));
        assert!(LogisticProblem::new(p.dataset().clone(), -1.0).is_err());
    }

    #[test]
    fn single_component_full_equals_component() {
        let ds = parse_libsvm("-1 1:0.3 2:-2".as_bytes(), &ParseOptions::default()).unwrap();
        let p = LogisticProblem::with_default_lambda(ds);
        let w = [0.7, 0.2];
        assert_eq!(p.full_value(&w), p.component_value(0, &w).unwrap());
        let g = p.full_grad(&w);
        let gi = p.component_grad(0, &w).unwrap();
        for j in 0..2 {
            assert!((g[j] - gi[j]).abs() <= 1e-16);
        }
    }
}
