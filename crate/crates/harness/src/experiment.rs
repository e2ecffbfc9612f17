//! Multi-seed experiment execution and persistence.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use sgdlab_core::bounds::{
    strongly_convex_asymptote, strongly_convex_bound, strongly_convex_horizon, nonconvex_asymptote,
    nonconvex_bound, nonconvex_horizon, BoundInputs, Regime,
};
use sgdlab_core::diagnostics::{
    check_epsilon_condition, gradient_census, CensusMode, EpsilonCondition, GradientCensus,
};
use sgdlab_core::numeric::{dist_sq, KahanSum};
use sgdlab_core::optimizers::{OptimizerRegistry, RunContext, RunOutput, TraceRecord};

use crate::config::{CensusModeSpec, ExperimentConfig, ProblemSpec};
use crate::problem::{build_problem, solve_reference, BuiltProblem, ProblemSummary, ReferenceSolution};
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub trace_file: Option<String>,
    pub final_value: Option<f64>,
    pub f_gap: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub dist_sq: Option<f64>,
    pub n_hat: Option<f64>,
    pub iterations: Option<u64>,
    pub component_evals: Option<u64>,
    pub accuracy: Option<f64>,
    /// `p_eps` over the grid, measured at this seed's final iterate.
    pub final_census_p: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedMinimum {
    pub f_gap: Option<f64>,
    pub final_census_p: Vec<f64>,
}

/// How the logged trace rows of every seed compare with a bound curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundComparison {
    pub regime: Regime,
    pub epsilon: f64,
    pub p_eps: f64,
    pub m_eps: Option<f64>,
    pub asymptote: Option<f64>,
    pub horizon: Option<f64>,
    pub plateau: Option<f64>,
    pub rows_checked: usize,
    /// Rows whose single-seed value exceeds the bound on the expectation.
    pub rows_above: usize,
    pub max_ratio: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub name: String,
    pub config_hash: String,
    pub algorithm: String,
    pub out_dir: PathBuf,
    pub problem: ProblemSummary,
    pub reference: ReferenceSolution,
    pub census: GradientCensus,
    pub epsilon_condition: EpsilonCondition,
    pub seeds: Vec<SeedResult>,
    pub minimum_across_seeds: Option<SeedMinimum>,
    pub bounds: Option<BoundComparison>,
    pub wall_clock_secs: f64,
}

/// Paths and environment for a run.
#[derive(Debug, Clone, Default)]
pub struct RunEnv {
    pub data_dir: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// CSV with header `t,evals,F,grad_norm_sq,dist_sq,rt`; absent values are
/// empty fields.
pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "evals", "F", "grad_norm_sq", "dist_sq", "rt"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.evals.to_string(),
            format!("{:e}", r.f_value),
            format!("{:e}", r.grad_norm_sq),
            opt(r.dist_sq),
            opt(r.rt()),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::Csv(e.into()))?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub evals: u64,
    pub f_value: f64,
    pub grad_norm_sq: f64,
    pub dist_sq: Option<f64>,
    pub rt: Option<f64>,
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let parse = |s: &str| -> Result<Option<f64>, HarnessError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| HarnessError::Config(format!("bad number `{s}` in trace")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| -> Result<u64, HarnessError> {
            field(k).parse().map_err(|_| HarnessError::Config(format!("bad integer `{}` in trace", field(k))))
        };
        rows.push(TraceRow {
            t: int(0)?,
            evals: int(1)?,
            f_value: parse(field(2))?.unwrap_or(f64::NAN),
            grad_norm_sq: parse(field(3))?.unwrap_or(f64::NAN),
            dist_sq: parse(field(4))?,
            rt: parse(field(5))?,
        });
    }
    Ok(rows)
}

pub fn census_mode(cfg: &ExperimentConfig) -> Result<CensusMode, HarnessError> {
    let d = &cfg.diagnostics;
    let batch = d.census_batch.or(cfg.optimizer.params.batch).unwrap_or(1);
    let mc = CensusMode::MonteCarlo { batch, draws: d.census_draws, seed: d.census_seed };
    Ok(match d.census_mode {
        CensusModeSpec::Auto if batch == 1 => CensusMode::Exact,
        CensusModeSpec::Auto | CensusModeSpec::MonteCarlo => mc,
        CensusModeSpec::Exact if batch == 1 => CensusMode::Exact,
        CensusModeSpec::Exact => {
            return Err(HarnessError::Config(format!(
                "exact census enumerates single components but the run uses batch {batch}"
            )))
        }
    })
}

/// Iterations between trace rows when the config leaves it open: once per
/// epoch for stochastic methods, every iteration for full-batch ones.
pub fn default_trace_every(cfg: &ExperimentConfig, n: usize) -> u64 {
    cfg.trace_every.unwrap_or_else(|| match cfg.optimizer.algorithm.as_str() {
        "gd" | "lbfgs" => 1,
        _ => {
            let b = cfg.optimizer.params.batch.unwrap_or(1).max(1);
            (n as u64).div_ceil(b as u64).max(1)
        }
    })
}

/// Reference solve plus census, shared by `run` and `census`.
pub struct Prepared {
    pub built: BuiltProblem,
    pub reference: ReferenceSolution,
    pub census: GradientCensus,
    pub condition: EpsilonCondition,
}

pub fn prepare(cfg: &ExperimentConfig, env: &RunEnv) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let built = build_problem(&cfg.problem, env.data_dir.as_deref())?;
    let d = &cfg.diagnostics;
    let reference = solve_reference(&built, d.reference_tolerance, d.reference_max_iters)?;
    let census = gradient_census(built.objective(), &reference.w, &d.epsilon_grid, census_mode(cfg)?)?;
    let condition = check_epsilon_condition(&census);
    Ok(Prepared { built, reference, census, condition })
}

pub fn run_experiment(cfg: &ExperimentConfig, env: &RunEnv) -> Result<RunReport, HarnessError> {
    let start = Instant::now();
    let prep = prepare(cfg, env)?;
    let out_dir = cfg.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    write_json(&out_dir.join("reference.json"), &prep.reference)?;
    write_json(
        &out_dir.join("census.json"),
        &serde_json::json!({ "census": &prep.census, "epsilon_condition": &prep.condition }),
    )?;

    let registry = OptimizerRegistry::with_builtins();
    let optimizer = registry.build(&cfg.optimizer.algorithm, &cfg.optimizer.params)?;
    let problem = prep.built.objective();
    let w0 = cfg.w0.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    let trace_every = default_trace_every(cfg, problem.n());
    let mode = census_mode(cfg)?;

    let runs: Vec<(u64, Result<RunOutput, HarnessError>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = RunContext {
                seed,
                trace_every,
                reference: Some(&prep.reference.w),
                keep_iterates: false,
            };
            let res = optimizer.run(problem, &w0, &ctx).map_err(HarnessError::from).and_then(|out| {
                let path = out_dir.join(format!("trace_seed{seed}.csv"));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                write_trace_csv(&out.trace, std::io::BufWriter::new(file))?;
                Ok(out)
            });
            (seed, res)
        })
        .collect();

    let seeds: Vec<SeedResult> = runs
        .par_iter()
        .map(|(seed, res)| match res {
            Ok(out) => seed_result(*seed, out, &prep, &cfg.diagnostics.epsilon_grid, mode),
            Err(e) => SeedResult {
                seed: *seed,
                trace_file: None,
                final_value: None,
                f_gap: None,
                grad_norm_sq: None,
                dist_sq: None,
                n_hat: None,
                iterations: None,
                component_evals: None,
                accuracy: None,
                final_census_p: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    let outputs: Vec<&RunOutput> = runs.iter().filter_map(|(_, r)| r.as_ref().ok()).collect();
    let bounds = if cfg.optimizer.algorithm == "sgd" && !outputs.is_empty() {
        Some(compare_with_bounds(cfg, &prep, &w0, &outputs, &seeds))
    } else {
        None
    };

    let report = RunReport {
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        algorithm: cfg.optimizer.algorithm.clone(),
        out_dir: out_dir.clone(),
        problem: prep.built.summary(),
        minimum_across_seeds: seed_minimum(&seeds),
        reference: prep.reference,
        census: prep.census,
        epsilon_condition: prep.condition,
        seeds,
        bounds,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    write_json(&out_dir.join("report.json"), &report)?;
    let table = render_table(&report);
    fs::write(out_dir.join("table.txt"), &table).map_err(io_err(&out_dir))?;
    Ok(report)
}

fn seed_result(
    seed: u64,
    out: &RunOutput,
    prep: &Prepared,
    grid: &[f64],
    mode: CensusMode,
) -> SeedResult {
    let problem = prep.built.objective();
    let last = out.last();
    let final_value = problem.full_value(&out.w);
    let n_hat = out.trace.iter().filter_map(TraceRecord::rt).fold(None, |acc: Option<f64>, r| {
        Some(acc.map_or(r, |a| a.max(r)))
    });
    let final_census_p = gradient_census(problem, &out.w, grid, mode)
        .ok()
        .map(|c| c.entries.iter().map(|e| e.p).collect());
    SeedResult {
        seed,
        trace_file: Some(format!("trace_seed{seed}.csv")),
        final_value: Some(final_value),
        f_gap: Some(final_value - prep.reference.f_value),
        grad_norm_sq: last.map(|r| r.grad_norm_sq),
        dist_sq: Some(dist_sq(&out.w, &prep.reference.w)),
        n_hat,
        iterations: Some(out.iterations),
        component_evals: Some(out.component_evals),
        accuracy: prep.built.accuracy(&out.w),
        final_census_p,
        error: None,
    }
}

fn seed_minimum(seeds: &[SeedResult]) -> Option<SeedMinimum> {
    let ok: Vec<&SeedResult> = seeds.iter().filter(|s| s.error.is_none()).collect();
    let first = ok.first()?;
    let width = first.final_census_p.as_ref().map_or(0, Vec::len);
    let final_census_p = (0..width)
        .map(|k| {
            ok.iter()
                .filter_map(|s| s.final_census_p.as_ref().map(|p| p[k]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let f_gap = ok.iter().filter_map(|s| s.f_gap).reduce(f64::min);
    Some(SeedMinimum { f_gap, final_census_p })
}

/// Census entry used for bound evaluation: the smallest grid epsilon meeting
/// `1 - p <= eps`, else the one with the smallest noise term.
fn bound_epsilon(census: &GradientCensus, condition: &EpsilonCondition) -> Option<(f64, f64, Option<f64>)> {
    if let Some(eps) = condition.epsilon() {
        let e = census.entry(eps)?;
        return Some((e.epsilon, e.p, e.m_eps));
    }
    census
        .entries
        .iter()
        .map(|e| (e.epsilon, e.p, e.m_eps))
        .min_by(|a, b| {
            let noise = |x: &(f64, f64, Option<f64>)| x.1 * x.0 + (1.0 - x.1) * x.2.unwrap_or(0.0);
            noise(a).total_cmp(&noise(b))
        })
}

fn compare_with_bounds(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    w0: &[f64],
    outputs: &[&RunOutput],
    seeds: &[SeedResult],
) -> BoundComparison {
    let problem = prep.built.objective();
    let (epsilon, p_eps, m_eps) = bound_epsilon(&prep.census, &prep.condition).unwrap_or((f64::NAN, 0.0, None));
    let mut inputs = BoundInputs::new(
        problem.smoothness().value,
        cfg.optimizer.params.eta.unwrap_or(f64::NAN),
        epsilon,
        p_eps,
    );
    inputs.m_eps = m_eps;
    inputs.batch = cfg.optimizer.params.batch.unwrap_or(1);
    let mut notes = Vec::new();
    if problem.smoothness().estimated {
        notes.push("smoothness constant is a local estimate".to_string());
    }

    let (regime, asymptote, horizon, measured): (Regime, _, _, Box<dyn Fn(&RunOutput) -> Vec<(f64, f64)>>) =
        match problem.strong_convexity() {
            Some(mu) => {
                inputs.mu = Some(mu);
                inputs.dist0_sq = Some(dist_sq(w0, &prep.reference.w));
                let rows = |out: &RunOutput| {
                    out.trace.iter().filter_map(|r| r.dist_sq.map(|d| (r.t as f64, d))).collect()
                };
                (
                    Regime::StronglyConvex,
                    strongly_convex_asymptote(&inputs),
                    strongly_convex_horizon(&inputs),
                    Box::new(rows),
                )
            }
            None => {
                let f_star = match cfg.problem {
                    ProblemSpec::Quartic { .. } => 0.0,
                    _ => prep.reference.f_value,
                };
                inputs.f_gap = Some(problem.full_value(w0) - f_star);
                inputs.n_drift = seeds.iter().filter_map(|s| s.n_hat).reduce(f64::max);
                if cfg.trace_every.unwrap_or(0) != 1 {
                    notes.push("running gradient averages use logged rows only".to_string());
                }
                let rows = |out: &RunOutput| {
                    let mut acc = KahanSum::new();
                    out.trace
                        .iter()
                        .enumerate()
                        .map(|(k, r)| {
                            acc.add(r.grad_norm_sq);
                            (r.t as f64, acc.value() / (k + 1) as f64)
                        })
                        .collect()
                };
                (Regime::Nonconvex, nonconvex_asymptote(&inputs), nonconvex_horizon(&inputs), Box::new(rows))
            }
        };

    let asymptote = asymptote.map_err(|e| notes.push(format!("asymptote: {e}"))).ok();
    let horizon = horizon.map_err(|e| notes.push(format!("horizon: {e}"))).ok();
    let (mut rows_checked, mut rows_above, mut max_ratio) = (0usize, 0usize, None::<f64>);
    let mut bound_error = None;
    for out in outputs {
        for (t, value) in measured(out) {
            let b = match regime {
                Regime::StronglyConvex => strongly_convex_bound(&inputs, t),
                _ => nonconvex_bound(&inputs, t),
            };
            match b {
                Ok(b) => {
                    rows_checked += 1;
                    if value > b {
                        rows_above += 1;
                    }
                    let ratio = value / b;
                    max_ratio = Some(max_ratio.map_or(ratio, |m| m.max(ratio)));
                }
                Err(e) => {
                    bound_error.get_or_insert_with(|| e.to_string());
                }
            }
        }
    }
    if let Some(e) = bound_error {
        notes.push(format!("bound: {e}"));
    }
    BoundComparison {
        regime,
        epsilon,
        p_eps,
        m_eps,
        asymptote,
        horizon: horizon.map(|h| h.t),
        plateau: horizon.map(|h| h.plateau),
        rows_checked,
        rows_above,
        max_ratio,
        notes,
    }
}

fn pct(p: f64) -> String {
    format!("{:.4}%", 100.0 * p)
}

/// Text table: the census at the reference point, one row per seed with the
/// census at its final iterate, and the minimum across seeds.
pub fn render_table(report: &RunReport) -> String {
    let grid: Vec<f64> = report.census.entries.iter().map(|e| e.epsilon).collect();
    let mut header = vec!["row".to_string(), "F(w)-F(w*)".to_string()];
    header.extend(grid.iter().map(|e| format!("eps={e:e}")));
    header.push("accuracy".into());

    let mut rows = vec![header];
    let mut star = vec!["w*".to_string(), "0".to_string()];
    star.extend(report.census.entries.iter().map(|e| pct(e.p)));
    star.push(String::new());
    rows.push(star);
    for s in &report.seeds {
        let mut row = vec![format!("seed {}", s.seed)];
        match &s.error {
            Some(e) => row.push(format!("error: {e}")),
            None => {
                row.push(s.f_gap.map(|g| format!("{g:.3e}")).unwrap_or_default());
                match &s.final_census_p {
                    Some(ps) => row.extend(ps.iter().map(|&p| pct(p))),
                    None => row.extend(grid.iter().map(|_| String::new())),
                }
                row.push(s.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default());
            }
        }
        rows.push(row);
    }
    if let Some(m) = &report.minimum_across_seeds {
        let mut row = vec!["min".to_string(), m.f_gap.map(|g| format!("{g:.3e}")).unwrap_or_default()];
        row.extend(m.final_census_p.iter().map(|&p| pct(p)));
        rows.push(row);
    }

    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut text = format!("{} ({}, {} seeds)\n", report.name, report.algorithm, report.seeds.len());
    for r in &rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, v)| format!("{v:>w$}", w = widths[c])).collect();
        text.push_str(line.join("  ").trim_end());
        text.push('\n');
    }
    match &report.epsilon_condition {
        EpsilonCondition::Satisfied { epsilon, .. } => {
            text.push_str(&format!("smallest eps with 1 - p <= eps: {epsilon:e}\n"))
        }
        EpsilonCondition::NoneOnGrid => text.push_str("no grid eps satisfies 1 - p <= eps\n"),
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use sgdlab_core::optimizers::OptimizerParams;

    use crate::config::{DiagnosticsSpec, OptimizerSpec};

    fn small_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            name: "smoke".into(),
            problem: ProblemSpec::SyntheticLogistic { n: 10, d: 3, flip_probability: 0.0, seed: 1, lambda: None },
            optimizer: OptimizerSpec {
                algorithm: "sgd".into(),
                params: OptimizerParams { eta: Some(0.1), epochs: Some(5.0), ..Default::default() },
            },
            diagnostics: DiagnosticsSpec::default(),
            seeds: vec![0],
            out_dir: dir.to_path_buf(),
            trace_every: None,
            w0: None,
        }
    }

    #[test]
    fn trace_csv_round_trip() {
        let rows = vec![TraceRecord {
            t: 3,
            evals: 6,
            f_value: 0.25,
            grad_norm_sq: 1e-20,
            dist_sq: None,
            rt_numerator: Some(1.0),
            rt_denominator: Some(4.0),
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,evals,F,grad_norm_sq,dist_sq,rt\n3,6,"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        fs::write(&path, text).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back[0].t, 3);
        assert_eq!(back[0].dist_sq, None);
        assert_eq!(back[0].rt, Some(0.25));
        assert_eq!(back[0].grad_norm_sq, 1e-20);
    }

    #[test]
    fn smoke_run_writes_one_trace() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&small_config(dir.path()), &RunEnv::default()).unwrap();
        assert_eq!(report.seeds.len(), 1);
        assert!(report.seeds[0].error.is_none());
        assert_eq!(report.census.entries.len(), 5);
        let traces: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("trace_"))
            .collect();
        assert_eq!(traces.len(), 1);
        for f in ["report.json", "census.json", "reference.json", "table.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(report.census.reference_point, report.reference.w);
    }

    #[test]
    fn exact_census_rejects_minibatches() {
        let mut cfg = small_config(Path::new("unused"));
        cfg.optimizer.params.batch = Some(4);
        assert!(matches!(census_mode(&cfg).unwrap(), CensusMode::MonteCarlo { batch: 4, .. }));
        cfg.diagnostics.census_mode = CensusModeSpec::Exact;
        assert!(census_mode(&cfg).is_err());
    }
}
