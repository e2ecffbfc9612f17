//! Finite-sum objectives `F(w) = (1/n) sum_i f_i(w)`.
//!
//! Every objective implements [`Objective`]. Implementors supply the
//! per-component value and gradient; full averages, checked accessors and
//! gradient matrices are provided on top of those.

mod logistic;
mod quadratic;
mod quartic;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{KahanSum, KahanVec};

pub use logistic::LogisticProblem;
pub use quadratic::QuadraticEnsemble;
pub use quartic::{ProbeCloud, QuarticProblem};

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("component index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("weight vector has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("weight vector has non-finite entries")]
    NonFinite,
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
}

/// Dense parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for WeightVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for WeightVector {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl Deref for WeightVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for WeightVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Smoothness constant `L` and whether it is a certified bound or a local
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smoothness {
    pub value: f64,
    pub estimated: bool,
}

impl Smoothness {
    pub fn exact(value: f64) -> Self {
        Self { value, estimated: false }
    }
}

/// A finite sum of `n` smooth components over `R^d`.
///
/// `component_value_at` and `add_component_grad` may assume `i < n` and
/// `w.len() == dim`; the checked entry points are [`Objective::component_value`]
/// and [`Objective::component_grad`]. Objects are immutable after
/// construction and safe to evaluate from many threads.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn n(&self) -> usize;

    fn dim(&self) -> usize;

    fn component_value_at(&self, i: usize, w: &[f64]) -> f64;

    /// `out += scale * grad f_i(w)`
    fn add_component_grad(&self, i: usize, w: &[f64], scale: f64, out: &mut [f64]);

    fn smoothness(&self) -> Smoothness;

    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// A stationary point known by construction, if any.
    fn known_stationary_point(&self) -> Option<&[f64]> {
        None
    }

    fn full_value(&self, w: &[f64]) -> f64 {
        let n = self.n();
        (0..n)
            .map(|i| self.component_value_at(i, w))
            .collect::<KahanSum>()
            .value()
            / n as f64
    }

    fn full_grad(&self, w: &[f64]) -> WeightVector {
        let (n, d) = (self.n(), self.dim());
        let mut acc = KahanVec::zeros(d);
        let mut scratch = vec![0.0; d];
        for i in 0..n {
            scratch.iter_mut().for_each(|x| *x = 0.0);
            self.add_component_grad(i, w, 1.0, &mut scratch);
            acc.add_scaled(1.0, &scratch);
        }
        let mut g = acc.into_vec();
        g.iter_mut().for_each(|x| *x /= n as f64);
        g.into()
    }

    fn component_value(&self, i: usize, w: &[f64]) -> Result<f64, ProblemError> {
        self.check(i, w)?;
        Ok(self.component_value_at(i, w))
    }

    fn component_grad(&self, i: usize, w: &[f64]) -> Result<WeightVector, ProblemError> {
        self.check(i, w)?;
        let mut g = WeightVector::zeros(self.dim());
        self.add_component_grad(i, w, 1.0, &mut g);
        Ok(g)
    }

    /// All component gradients at `w`, row-major `n x d`.
    fn component_grad_matrix(&self, w: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n(), self.dim());
        let mut out = vec![0.0; n * d];
        for (i, row) in out.chunks_exact_mut(d).enumerate() {
            self.add_component_grad(i, w, 1.0, row);
        }
        out
    }

    fn check(&self, i: usize, w: &[f64]) -> Result<(), ProblemError> {
        if i >= self.n() {
            return Err(ProblemError::IndexOutOfRange { index: i, n: self.n() });
        }
        if w.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch { got: w.len(), expected: self.dim() });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(ProblemError::NonFinite);
        }
        Ok(())
    }
}
