//! Side-by-side optimizer comparison on one problem, aligned on component
//! gradient evaluations.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use sgdlab_core::optimizers::{OptimizerRegistry, RunContext, TraceRecord};

use crate::config::ExperimentConfig;
use crate::experiment::default_trace_every;
use crate::problem::{build_problem, solve_reference};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub f_star: f64,
    /// Union of the evaluation counts at which any run logged a row.
    pub evals: Vec<u64>,
    /// `gaps[k][j]`: seed-averaged `F - F*` of method `j` at `evals[k]`,
    /// carried forward from its latest row at or before that count.
    pub gaps: Vec<Vec<Option<f64>>>,
}

impl Comparison {
    pub fn column(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Seed-averaged gap of `label` as of `evals` component evaluations.
    pub fn gap_at(&self, label: &str, evals: u64) -> Option<f64> {
        let j = self.column(label)?;
        let k = self.evals.partition_point(|&e| e <= evals).checked_sub(1)?;
        self.gaps[k][j]
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["evals".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (e, row) in self.evals.iter().zip(&self.gaps) {
            let mut rec = vec![e.to_string()];
            rec.extend(row.iter().map(|g| g.map(|x| format!("{x:e}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
        Ok(())
    }
}

/// Latest row at or before `evals`.
fn as_of(trace: &[TraceRecord], evals: u64) -> Option<&TraceRecord> {
    let k = trace.partition_point(|r| r.evals <= evals);
    k.checked_sub(1).map(|k| &trace[k])
}

/// Runs every config on their common problem. Configs must agree on the
/// problem and starting point and carry distinct names, which become the
/// column labels.
pub fn compare_optimizers(configs: &[ExperimentConfig], data_dir: Option<&Path>) -> Result<Comparison, HarnessError> {
    let first = configs.first().ok_or_else(|| HarnessError::Config("nothing to compare".into()))?;
    for c in configs {
        c.validate()?;
        if c.problem != first.problem || c.w0 != first.w0 {
            return Err(HarnessError::MismatchedProblems {
                left: first.name.clone(),
                right: c.name.clone(),
            });
        }
    }
    let mut labels: Vec<String> = configs.iter().map(|c| c.name.clone()).collect();
    labels.sort();
    labels.dedup();
    if labels.len() != configs.len() {
        return Err(HarnessError::Config("compared configs need distinct names".into()));
    }
    let labels: Vec<String> = configs.iter().map(|c| c.name.clone()).collect();

    let built = build_problem(&first.problem, data_dir)?;
    let problem = built.objective();
    let d = &first.diagnostics;
    let reference = solve_reference(&built, d.reference_tolerance, d.reference_max_iters)?;
    let w0 = first.w0.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    let registry = OptimizerRegistry::with_builtins();

    let mut traces: Vec<Vec<Vec<TraceRecord>>> = Vec::with_capacity(configs.len());
    for c in configs {
        let opt = registry.build(&c.optimizer.algorithm, &c.optimizer.params)?;
        let every = default_trace_every(c, problem.n());
        let runs = c
            .seeds
            .par_iter()
            .map(|&seed| {
                let ctx = RunContext { seed, trace_every: every, reference: None, keep_iterates: false };
                opt.run(problem, &w0, &ctx).map(|o| o.trace)
            })
            .collect::<Result<Vec<_>, _>>()?;
        traces.push(runs);
    }

    let mut evals: Vec<u64> = traces.iter().flatten().flatten().map(|r| r.evals).collect();
    evals.sort_unstable();
    evals.dedup();
    let f_star = reference.f_value;
    let gaps = evals
        .iter()
        .map(|&e| {
            traces
                .iter()
                .map(|runs| {
                    let vals: Option<Vec<f64>> =
                        runs.iter().map(|t| as_of(t, e).map(|r| r.f_value - f_star)).collect();
                    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        })
        .collect();
    Ok(Comparison { labels, f_star, evals, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(evals: u64, f: f64) -> TraceRecord {
        TraceRecord {
            t: evals,
            evals,
            f_value: f,
            grad_norm_sq: 0.0,
            dist_sq: None,
            rt_numerator: None,
            rt_denominator: None,
        }
    }

    #[test]
    fn as_of_carries_forward() {
        let t = vec![rec(0, 3.0), rec(10, 2.0), rec(20, 1.0)];
        assert_eq!(as_of(&t, 0).unwrap().f_value, 3.0);
        assert_eq!(as_of(&t, 15).unwrap().f_value, 2.0);
        assert_eq!(as_of(&t, 99).unwrap().f_value, 1.0);
        assert!(as_of(&t[1..], 5).is_none());
    }

    #[test]
    fn gap_lookup_and_csv() {
        let c = Comparison {
            labels: vec!["a".into(), "b".into()],
            f_star: 0.0,
            evals: vec![0, 5, 10],
            gaps: vec![vec![Some(1.0), Some(1.0)], vec![Some(0.5), None], vec![Some(0.25), Some(0.1)]],
        };
        assert_eq!(c.gap_at("a", 7), Some(0.5));
        assert_eq!(c.gap_at("b", 100), Some(0.1));
        assert_eq!(c.gap_at("c", 0), None);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("evals,a,b"));
        assert_eq!(text.lines().nth(2), Some("5,5e-1,"));
    }
}
