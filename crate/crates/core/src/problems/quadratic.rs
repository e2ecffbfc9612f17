use crate::numeric::KahanVec;

use super::{Objective, ProblemError, Smoothness};

/// Isotropic quadratic ensemble `f_i(w) = ||w - c_i||^2 / 2`.
///
/// `grad f_i(w) - grad f_i(w') = w - w'` for every component, which makes it a
/// convenient closed-form test bed: `L = mu = 1` and the minimizer is the
/// mean of the centers.
#[derive(Debug, Clone)]
pub struct QuadraticEnsemble {
    centers: Vec<f64>,
    d: usize,
    mean: Vec<f64>,
}

impl QuadraticEnsemble {
    /// `centers` is row-major `n x d`.
    pub fn new(centers: Vec<f64>, d: usize) -> Result<Self, ProblemError> {
        if d == 0 || centers.is_empty() || centers.len() % d != 0 {
            return Err(ProblemError::InvalidParameter(
                "centers must be a non-empty n x d array".into(),
            ));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(ProblemError::NonFinite);
        }
        let n = centers.len() / d;
        let mut acc = KahanVec::zeros(d);
        for c in centers.chunks_exact(d) {
            acc.add_scaled(1.0, c);
        }
        let mean = acc.into_vec().into_iter().map(|s| s / n as f64).collect();
        Ok(Self { centers, d, mean })
    }

    /// One-dimensional ensemble with the given centers.
    pub fn scalar(centers: &[f64]) -> Self {
        Self::new(centers.to_vec(), 1).expect("non-empty finite centers")
    }

    pub fn center(&self, i: usize) -> &[f64] {
        &self.centers[i * self.d..(i + 1) * self.d]
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.mean
    }
}

impl Objective for QuadraticEnsemble {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn n(&self) -> usize {
        self.centers.len() / self.d
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn component_value_at(&self, i: usize, w: &[f64]) -> f64 {
        0.5 * crate::numeric::dist_sq(w, self.center(i))
    }

    fn add_component_grad(&self, i: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        for ((o, x), c) in out.iter_mut().zip(w).zip(self.center(i)) {
            *o += scale * (x - c);
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::exact(1.0)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(1.0)
    }

    fn known_stationary_point(&self) -> Option<&[f64]> {
        Some(&self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizer_is_mean() {
        let q = QuadraticEnsemble::scalar(&[1.0, 2.0, 6.0]);
        assert_eq!(q.minimizer(), &[3.0]);
        assert_eq!(q.full_grad(&[3.0])[0], 0.0);
        assert_eq!(q.component_grad(2, &[0.0]).unwrap()[0], -6.0);
    }

    #[test]
    fn rejects_ragged_centers() {
        assert!(QuadraticEnsemble::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(QuadraticEnsemble::new(vec![], 1).is_err());
    }
}
