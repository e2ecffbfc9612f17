use crate::numeric::axpy;
use crate::problems::{Objective, WeightVector};

use super::{
    check_start, check_step, is_diverged, OptimError, Optimizer, RunContext, RunOutput,
    TraceRecorder,
};

/// Full-batch gradient descent with a fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDescent {
    pub eta: f64,
    pub iterations: u64,
}

pub fn gd_run(
    problem: &dyn Objective,
    w0: &[f64],
    eta: f64,
    iterations: u64,
    ctx: &RunContext<'_>,
) -> Result<RunOutput, OptimError> {
    GradientDescent { eta, iterations }.run(problem, w0, ctx)
}

impl Optimizer for GradientDescent {
    fn name(&self) -> &'static str {
        "gd"
    }

    fn run(
        &self,
        problem: &dyn Objective,
        w0: &[f64],
        ctx: &RunContext<'_>,
    ) -> Result<RunOutput, OptimError> {
        check_start(problem, w0)?;
        check_step(self.eta)?;
        let n = problem.n() as u64;
        let mut rec = TraceRecorder::new(problem, ctx);
        let mut w = w0.to_vec();
        let mut evals = 0;
        rec.record(0, 0, &w)?;
        for t in 1..=self.iterations {
            let g = problem.full_grad(&w);
            axpy(-self.eta, &g, &mut w);
            evals += n;
            if is_diverged(&w) {
                return Err(rec.diverged(t));
            }
            if rec.due(t, self.iterations) {
                rec.record(t, evals, &w)?;
            }
        }
        let (trace, iterates) = rec.finish();
        Ok(RunOutput {
            algorithm: self.name().into(),
            w: WeightVector::from(w),
            trace,
            iterates,
            iterations: self.iterations,
            component_evals: evals,
            lbfgs: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticEnsemble;

    #[test]
    fn halving_on_unit_quadratic() {
        let q = QuadraticEnsemble::scalar(&[0.0]);
        let out = gd_run(&q, &[1.0], 0.5, 20, &RunContext::default()).unwrap();
        for row in &out.trace {
            let expect = 0.5f64.powi(row.t as i32);
            assert_eq!(row.f_value, 0.5 * expect * expect);
        }
        assert_eq!(out.w[0], 0.5f64.powi(20));
    }

    #[test]
    fn stationary_start_is_constant() {
        let q = QuadraticEnsemble::scalar(&[1.0, 3.0]);
        let out = gd_run(&q, &[2.0], 0.7, 5, &RunContext::default()).unwrap();
        assert!(out.trace.iter().all(|r| r.f_value == out.trace[0].f_value));
        assert_eq!(out.w[0], 2.0);
    }
}
