use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    Continuation, GradientDescent, Lbfgs, OptimError, Optimizer, Sampling, Sgd, Svrg, WolfeParams,
};

/// Iteration budget, either absolute or in epochs of `n` component-gradient
/// evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(u64),
    Epochs(f64),
}

impl Budget {
    /// Iteration count for a method that spends `per_iter` evaluations per
    /// step on a problem with `n` components.
    pub fn iterations(&self, n: usize, per_iter: u64) -> u64 {
        match *self {
            Budget::Iterations(t) => t,
            Budget::Epochs(e) => ((e * n as f64) / per_iter as f64).ceil() as u64,
        }
    }
}

/// Flat hyperparameter bag as it appears in experiment configs. Each
/// algorithm reads the fields it needs and rejects missing required ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    pub eta: Option<f64>,
    pub batch: Option<usize>,
    pub iterations: Option<u64>,
    pub epochs: Option<f64>,
    pub inner_loop: Option<usize>,
    pub sampling: Option<Sampling>,
    pub continuation: Option<Continuation>,
    pub memory: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iters: Option<u64>,
}

impl OptimizerParams {
    fn eta(&self, algo: &str) -> Result<f64, OptimError> {
        self.eta
            .ok_or_else(|| OptimError::InvalidParameter(format!("{algo} requires `eta`")))
    }

    fn budget(&self, algo: &str) -> Result<Budget, OptimError> {
        match (self.iterations, self.epochs) {
            (Some(t), None) => Ok(Budget::Iterations(t)),
            (None, Some(e)) if e >= 0.0 => Ok(Budget::Epochs(e)),
            (None, None) => Err(OptimError::InvalidParameter(format!(
                "{algo} requires `iterations` or `epochs`"
            ))),
            _ => Err(OptimError::InvalidParameter(format!(
                "{algo}: give exactly one non-negative budget (`iterations` or `epochs`)"
            ))),
        }
    }
}

pub type OptimizerFactory = fn(&OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError>;

fn build_sgd(p: &OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError> {
    Ok(Box::new(Sgd {
        eta: p.eta("sgd")?,
        batch: p.batch.unwrap_or(1),
        budget: p.budget("sgd")?,
        sampling: p.sampling.unwrap_or_default(),
    }))
}

fn build_svrg(p: &OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError> {
    let epochs = match p.budget("svrg")? {
        Budget::Iterations(t) => t as usize,
        Budget::Epochs(e) => e.ceil() as usize,
    };
    Ok(Box::new(Svrg {
        eta: p.eta("svrg")?,
        inner: p.inner_loop,
        epochs,
        continuation: p.continuation.unwrap_or_default(),
    }))
}

fn build_gd(p: &OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError> {
    // one GD iteration is one epoch
    let iterations = p.budget("gd")?.iterations(1, 1);
    Ok(Box::new(GradientDescent { eta: p.eta("gd")?, iterations }))
}

fn build_lbfgs(p: &OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError> {
    let d = Lbfgs::default();
    Ok(Box::new(Lbfgs {
        memory: p.memory.unwrap_or(d.memory),
        tolerance: p.tolerance.unwrap_or(d.tolerance),
        max_iters: p.max_iters.or(p.iterations).unwrap_or(d.max_iters),
        wolfe: WolfeParams::default(),
    }))
}

/// Name -> factory table of available solvers.
pub struct OptimizerRegistry {
    entries: BTreeMap<String, OptimizerFactory>,
}

impl OptimizerRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    /// `sgd`, `svrg`, `gd` and `lbfgs`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("sgd", build_sgd);
        r.register("svrg", build_svrg);
        r.register("gd", build_gd);
        r.register("lbfgs", build_lbfgs);
        r
    }

    pub fn register(&mut self, name: &str, factory: OptimizerFactory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn build(&self, name: &str, params: &OptimizerParams) -> Result<Box<dyn Optimizer>, OptimError> {
        let factory = self
            .entries
            .get(name)
            .ok_or_else(|| OptimError::Unknown(name.to_string()))?;
        factory(params)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
