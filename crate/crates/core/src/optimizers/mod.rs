//! Iterative solvers over a finite-sum [`Objective`].
//!
//! All solvers implement [`Optimizer`] and emit the same [`TraceRecord`] rows,
//! keyed by iteration and by cumulative component-gradient evaluations so
//! that runs of different algorithms can be aligned on cost. Solvers are
//! registered by name in [`OptimizerRegistry`] and selected at runtime.

mod gd;
mod lbfgs;
mod registry;
mod sgd;
mod svrg;

use serde::Serialize;
use thiserror::Error;

use crate::diagnostics::{ComponentDrift, RtAccumulator};
use crate::numeric::{dist_sq, norm_sq};
use crate::problems::{Objective, WeightVector};

pub use gd::{gd_run, GradientDescent};
pub use lbfgs::{lbfgs_run, Lbfgs, LbfgsReport, WolfeParams};
pub use registry::{Budget, OptimizerFactory, OptimizerParams, OptimizerRegistry};
pub use sgd::{sgd_run, Sampling, Sgd, SgdConfig};
pub use svrg::{svrg_run, Continuation, Svrg};

/// Iterates whose norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("diverged at iteration {t}; last finite row: {last:?}")]
    Diverged { t: u64, last: Option<TraceRecord> },
    #[error("invalid optimizer parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown optimizer `{0}`")]
    Unknown(String),
    #[error("initial point has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// One logged point of an optimizer trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: u64,
    /// Cumulative component-gradient evaluations.
    pub evals: u64,
    pub f_value: f64,
    pub grad_norm_sq: f64,
    /// `||w_t - w*||^2` when a reference point is known.
    pub dist_sq: Option<f64>,
    /// Running sums over logged rows of the drift
    /// `(1/n) sum_i ||grad f_i(w_k) - grad f_i(w*)||^2` and of `||grad F(w_k)||^2`.
    pub rt_numerator: Option<f64>,
    pub rt_denominator: Option<f64>,
}

impl TraceRecord {
    /// Running ratio of the two sums; 0 when both are 0.
    pub fn rt(&self) -> Option<f64> {
        match (self.rt_numerator, self.rt_denominator) {
            (Some(num), Some(den)) => Some(RtAccumulator::ratio(num, den)),
            _ => None,
        }
    }
}

/// Per-run context shared by all algorithms.
#[derive(Debug, Clone, Copy)]
pub struct RunContext<'a> {
    pub seed: u64,
    /// Log a row every this many iterations, plus the first and last.
    pub trace_every: u64,
    /// Reference solution for `dist_sq` and the r_t sums.
    pub reference: Option<&'a [f64]>,
    /// Also return the iterate of every logged row.
    pub keep_iterates: bool,
}

impl Default for RunContext<'_> {
    fn default() -> Self {
        Self { seed: 0, trace_every: 1, reference: None, keep_iterates: false }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algorithm: String,
    pub w: WeightVector,
    pub trace: Vec<TraceRecord>,
    /// Iterates matching `trace` row by row; empty unless requested.
    pub iterates: Vec<WeightVector>,
    pub iterations: u64,
    pub component_evals: u64,
    pub lbfgs: Option<LbfgsReport>,
}

impl RunOutput {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.trace.last()
    }
}

/// A solver with its hyperparameters fixed.
pub trait Optimizer: Send + Sync {
    fn name(&self) -> &'static str;

    fn run(
        &self,
        problem: &dyn Objective,
        w0: &[f64],
        ctx: &RunContext<'_>,
    ) -> Result<RunOutput, OptimError>;
}

/// Builds trace rows for one run. Single producer.
pub(crate) struct TraceRecorder<'a> {
    problem: &'a dyn Objective,
    reference: Option<&'a [f64]>,
    drift: Option<ComponentDrift<'a>>,
    rt: RtAccumulator,
    every: u64,
    rows: Vec<TraceRecord>,
    iterates: Option<Vec<WeightVector>>,
}

impl<'a> TraceRecorder<'a> {
    pub(crate) fn new(problem: &'a dyn Objective, ctx: &RunContext<'a>) -> Self {
        Self {
            problem,
            reference: ctx.reference,
            drift: ctx.reference.map(|r| ComponentDrift::new(problem, r)),
            rt: RtAccumulator::default(),
            every: ctx.trace_every.max(1),
            rows: Vec::new(),
            iterates: ctx.keep_iterates.then(Vec::new),
        }
    }

    pub(crate) fn due(&self, t: u64, last: u64) -> bool {
        t == 0 || t == last || t % self.every == 0
    }

    pub(crate) fn record(&mut self, t: u64, evals: u64, w: &[f64]) -> Result<(), OptimError> {
        let f_value = self.problem.full_value(w);
        let grad_norm_sq = norm_sq(&self.problem.full_grad(w));
        if !f_value.is_finite() || !grad_norm_sq.is_finite() {
            return Err(self.diverged(t));
        }
        let (rt_numerator, rt_denominator) = match &self.drift {
            Some(drift) => {
                self.rt.push(drift.drift(w), grad_norm_sq);
                (Some(self.rt.numerator()), Some(self.rt.denominator()))
            }
            None => (None, None),
        };
        self.rows.push(TraceRecord {
            t,
            evals,
            f_value,
            grad_norm_sq,
            dist_sq: self.reference.map(|r| dist_sq(w, r)),
            rt_numerator,
            rt_denominator,
        });
        if let Some(its) = &mut self.iterates {
            its.push(w.into());
        }
        Ok(())
    }

    pub(crate) fn diverged(&self, t: u64) -> OptimError {
        OptimError::Diverged { t, last: self.rows.last().cloned() }
    }

    pub(crate) fn finish(self) -> (Vec<TraceRecord>, Vec<WeightVector>) {
        (self.rows, self.iterates.unwrap_or_default())
    }
}

pub(crate) fn is_diverged(w: &[f64]) -> bool {
    let sq = norm_sq(w);
    !sq.is_finite() || sq > DIVERGENCE_NORM * DIVERGENCE_NORM
}

pub(crate) fn check_start(problem: &dyn Objective, w0: &[f64]) -> Result<(), OptimError> {
    if w0.len() != problem.dim() {
        return Err(OptimError::DimensionMismatch { got: w0.len(), expected: problem.dim() });
    }
    if w0.iter().any(|x| !x.is_finite()) {
        return Err(OptimError::InvalidParameter("initial point is not finite".into()));
    }
    Ok(())
}

pub(crate) fn check_step(eta: f64) -> Result<(), OptimError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidParameter(format!("step size must be positive, got {eta}")))
    }
}
