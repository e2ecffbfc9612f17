use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::KahanVec;
use crate::problems::{Objective, WeightVector};

use super::{
    check_start, check_step, is_diverged, OptimError, Optimizer, RunContext, RunOutput,
    TraceRecorder,
};

/// Where the next epoch starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    #[default]
    LastIterate,
    /// Average of the inner iterates of the finished epoch.
    Average,
}

/// Stochastic variance-reduced gradient.
///
/// Each epoch takes a snapshot `w~`, stores every `grad f_i(w~)` together with
/// their mean, then runs `m` steps along
/// `v = grad f_i(w) - grad f_i(w~) + grad F(w~)`. Snapshot gradients are
/// cached, so an epoch costs `n + m` component-gradient evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Svrg {
    pub eta: f64,
    /// Inner loop length; `None` means `2n`.
    pub inner: Option<usize>,
    pub epochs: usize,
    pub continuation: Continuation,
}

pub fn svrg_run(
    problem: &dyn Objective,
    w0: &[f64],
    eta: f64,
    inner: Option<usize>,
    epochs: usize,
    ctx: &RunContext<'_>,
) -> Result<RunOutput, OptimError> {
    Svrg { eta, inner, epochs, continuation: Continuation::LastIterate }.run(problem, w0, ctx)
}

impl Optimizer for Svrg {
    fn name(&self) -> &'static str {
        "svrg"
    }

    fn run(
        &self,
        problem: &dyn Objective,
        w0: &[f64],
        ctx: &RunContext<'_>,
    ) -> Result<RunOutput, OptimError> {
        check_start(problem, w0)?;
        check_step(self.eta)?;
        let (n, d) = (problem.n(), problem.dim());
        let m = self.inner.unwrap_or(2 * n);
        if m == 0 {
            return Err(OptimError::InvalidParameter("inner loop length must be at least 1".into()));
        }
        let total = (m as u64) * self.epochs as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let mut rec = TraceRecorder::new(problem, ctx);
        let mut w = w0.to_vec();
        let mut v = vec![0.0; d];
        let mut evals = 0u64;
        let mut t = 0u64;

        rec.record(0, 0, &w)?;
        for _ in 0..self.epochs {
            let snapshot_grads = problem.component_grad_matrix(&w);
            evals += n as u64;
            let mut acc = KahanVec::zeros(d);
            for row in snapshot_grads.chunks_exact(d) {
                acc.add_scaled(1.0, row);
            }
            let mean: Vec<f64> = acc.into_vec().into_iter().map(|s| s / n as f64).collect();
            let mut avg = KahanVec::zeros(d);

            for _ in 0..m {
                let i = rng.random_range(0..n);
                let snap = &snapshot_grads[i * d..(i + 1) * d];
                // correction first so that n = 1 reduces exactly to a GD step
                for j in 0..d {
                    v[j] = mean[j] - snap[j];
                }
                problem.add_component_grad(i, &w, 1.0, &mut v);
                for j in 0..d {
                    w[j] -= self.eta * v[j];
                }
                evals += 1;
                t += 1;
                if is_diverged(&w) {
                    return Err(rec.diverged(t));
                }
                if self.continuation == Continuation::Average {
                    avg.add_scaled(1.0, &w);
                }
                if rec.due(t, total) {
                    rec.record(t, evals, &w)?;
                }
            }
            if self.continuation == Continuation::Average {
                w = avg.into_vec().into_iter().map(|s| s / m as f64).collect();
            }
        }
        if self.continuation == Continuation::Average && total > 0 {
            // the returned point is the averaged one; log it as a final row
            rec.record(t, evals, &w)?;
        }
        let (trace, iterates) = rec.finish();
        Ok(RunOutput {
            algorithm: self.name().into(),
            w: WeightVector::from(w),
            trace,
            iterates,
            iterations: t,
            component_evals: evals,
            lbfgs: None,
        })
    }
}
