use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::axpy;
use crate::problems::{Objective, WeightVector};

use super::{
    check_start, check_step, is_diverged, Budget, OptimError, Optimizer, RunContext, RunOutput,
    TraceRecorder,
};

/// How component indices are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// i.i.d. uniform draws with replacement.
    #[default]
    WithReplacement,
    /// A fresh random permutation per pass. Not covered by the i.i.d.
    /// convergence bounds.
    Shuffled,
}

/// Fixed-step minibatch SGD: `w_{t+1} = w_t - eta * (1/b) sum_j grad f_{xi_j}(w_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub eta: f64,
    pub batch: usize,
    pub budget: Budget,
    pub sampling: Sampling,
}

/// Everything needed for one SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub eta: f64,
    pub batch: usize,
    pub iterations: u64,
    pub seed: u64,
    pub trace_every: u64,
    pub sampling: Sampling,
}

impl SgdConfig {
    pub fn new(eta: f64, batch: usize, iterations: u64, seed: u64) -> Self {
        Self {
            eta,
            batch,
            iterations,
            seed,
            trace_every: iterations.max(1),
            sampling: Sampling::WithReplacement,
        }
    }
}

struct IndexSampler {
    n: usize,
    mode: Sampling,
    perm: Vec<usize>,
    pos: usize,
}

impl IndexSampler {
    fn new(n: usize, mode: Sampling) -> Self {
        Self { n, mode, perm: (0..n).collect(), pos: n }
    }

    #[inline]
    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        match self.mode {
            Sampling::WithReplacement => rng.random_range(0..self.n),
            Sampling::Shuffled => {
                if self.pos == self.n {
                    self.perm.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.perm[self.pos - 1]
            }
        }
    }
}

/// Runs `cfg.iterations` SGD updates from `w0`.
pub fn sgd_run(
    problem: &dyn Objective,
    w0: &[f64],
    cfg: &SgdConfig,
    reference: Option<&[f64]>,
) -> Result<RunOutput, OptimError> {
    let sgd = Sgd {
        eta: cfg.eta,
        batch: cfg.batch,
        budget: Budget::Iterations(cfg.iterations),
        sampling: cfg.sampling,
    };
    let ctx = RunContext { seed: cfg.seed, trace_every: cfg.trace_every, reference, keep_iterates: false };
    sgd.run(problem, w0, &ctx)
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn run(
        &self,
        problem: &dyn Objective,
        w0: &[f64],
        ctx: &RunContext<'_>,
    ) -> Result<RunOutput, OptimError> {
        check_start(problem, w0)?;
        check_step(self.eta)?;
        if self.batch == 0 {
            return Err(OptimError::InvalidParameter("batch size must be at least 1".into()));
        }
        let n = problem.n();
        // One epoch is n component-gradient evaluations.
        let iterations = self.budget.iterations(n, self.batch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut sampler = IndexSampler::new(n, self.sampling);
        let mut rec = TraceRecorder::new(problem, ctx);
        let mut w = w0.to_vec();
        let mut g = vec![0.0; w.len()];
        let inv_b = 1.0 / self.batch as f64;
        let mut evals = 0u64;

        rec.record(0, 0, &w)?;
        for t in 1..=iterations {
            g.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..self.batch {
                let i = sampler.next(&mut rng);
                problem.add_component_grad(i, &w, inv_b, &mut g);
            }
            axpy(-self.eta, &g, &mut w);
            evals += self.batch as u64;
            if is_diverged(&w) {
                return Err(rec.diverged(t));
            }
            if rec.due(t, iterations) {
                rec.record(t, evals, &w)?;
            }
        }
        let (trace, iterates) = rec.finish();
        Ok(RunOutput {
            algorithm: self.name().into(),
            w: WeightVector::from(w),
            trace,
            iterates,
            iterations,
            component_evals: evals,
            lbfgs: None,
        })
    }
}
