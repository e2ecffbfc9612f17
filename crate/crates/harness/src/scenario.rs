//! Planted quartic recovery with small versus concentrated large noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use sgdlab_core::diagnostics::{better_fitting, rt_trace};
use sgdlab_core::ingest::{generate_quartic, NoisePlan};
use sgdlab_core::numeric::dist_sq;
use sgdlab_core::optimizers::{lbfgs_run, Budget, Optimizer, RunContext, Sampling, Sgd};
use sgdlab_core::problems::{Objective, QuarticProblem, WeightVector};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuarticCase {
    /// Every observation carries small noise.
    I,
    /// The first 40% of observations carry large noise, the rest small.
    Ii,
}

impl QuarticCase {
    pub fn noise_plan(self, n: usize) -> NoisePlan {
        match self {
            QuarticCase::I => NoisePlan::small(),
            QuarticCase::Ii => NoisePlan::large_prefix(n),
        }
    }
}

impl fmt::Display for QuarticCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuarticCase::I => "i",
            QuarticCase::Ii => "ii",
        })
    }
}

impl FromStr for QuarticCase {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "i" | "1" => Ok(QuarticCase::I),
            "ii" | "2" => Ok(QuarticCase::Ii),
            other => Err(HarnessError::Config(format!("unknown quartic case `{other}`"))),
        }
    }
}

/// Instance size and SGD settings of the quartic scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuarticScenario {
    pub n: usize,
    pub w_hat: Vec<f64>,
    pub w0: Vec<f64>,
    /// Step as a fraction of `1 / L_hat`.
    pub eta_fraction: f64,
    pub batch: usize,
    pub iterations: u64,
    /// Share of the final iterates over which the oscillation radius is taken.
    pub tail_fraction: f64,
    /// Replace the noise plan by noiseless observations.
    pub noiseless: bool,
}

impl Default for QuarticScenario {
    fn default() -> Self {
        Self {
            n: 100,
            w_hat: vec![1.0, -0.5],
            w0: vec![-0.5, -1.0],
            eta_fraction: 0.3,
            batch: 1,
            iterations: 20_000,
            tail_fraction: 0.2,
            noiseless: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuarticReport {
    pub case: QuarticCase,
    pub seed: u64,
    pub eta: f64,
    pub l_hat: f64,
    pub iterations: u64,
    /// Stationary point of the noisy loss nearest the final iterate.
    pub w_star: WeightVector,
    pub w_final: WeightVector,
    /// `min_t min(||w_t - w_hat||, ||w_t + w_hat||)`
    pub min_distance: f64,
    /// Same distance at the last iterate.
    pub terminal_distance: f64,
    /// Largest pairwise distance among the tail iterates.
    pub oscillation_radius: f64,
    pub n_hat: f64,
    pub final_value: f64,
}

fn signed_distance(w: &[f64], w_hat: &[f64]) -> f64 {
    let plus = dist_sq(w, w_hat);
    let minus: f64 = w.iter().zip(w_hat).map(|(a, b)| (a + b) * (a + b)).sum();
    plus.min(minus).sqrt()
}

fn max_pairwise(points: &[WeightVector]) -> f64 {
    let mut best = 0.0f64;
    for (k, a) in points.iter().enumerate() {
        for b in &points[k + 1..] {
            best = best.max(dist_sq(a, b));
        }
    }
    best.sqrt()
}

pub fn quartic_problem(scenario: &QuarticScenario, case: QuarticCase, seed: u64) -> Result<QuarticProblem, HarnessError> {
    let plan = if scenario.noiseless { NoisePlan::None } else { case.noise_plan(scenario.n) };
    let inst = generate_quartic(scenario.n, &scenario.w_hat, &plan, seed)?;
    Ok(QuarticProblem::new(inst))
}

/// Runs one scenario with the default settings.
pub fn scenario_quartic(case: QuarticCase, seed: u64) -> Result<QuarticReport, HarnessError> {
    run_quartic(&QuarticScenario::default(), case, seed)
}

pub fn run_quartic(scenario: &QuarticScenario, case: QuarticCase, seed: u64) -> Result<QuarticReport, HarnessError> {
    if !(scenario.tail_fraction > 0.0 && scenario.tail_fraction <= 1.0) {
        return Err(HarnessError::Config("tail_fraction must lie in (0, 1]".into()));
    }
    let problem = quartic_problem(scenario, case, seed)?;
    let l_hat = problem.smoothness().value;
    let eta = scenario.eta_fraction / l_hat;
    let sgd = Sgd {
        eta,
        batch: scenario.batch,
        budget: Budget::Iterations(scenario.iterations),
        sampling: Sampling::WithReplacement,
    };
    let ctx = RunContext { seed, trace_every: 1, reference: None, keep_iterates: true };
    let out = sgd.run(&problem, &scenario.w0, &ctx)?;

    // the loss is even in w, so both signs of the nearby stationary point fit
    // equally well; take the one the run ended up next to
    let w_hat = problem.w_hat().to_vec();
    let neg: Vec<f64> = w_hat.iter().map(|x| -x).collect();
    let mut candidates = Vec::new();
    for start in [&w_hat, &neg] {
        candidates.push(lbfgs_run(&problem, start, 10, 1e-12, 10_000)?.w);
    }
    let best = better_fitting(&problem, &[&candidates[0], &candidates[1]]).unwrap_or(0);
    let mut w_star = candidates[best].clone();
    let flipped: Vec<f64> = w_star.iter().map(|x| -x).collect();
    if dist_sq(&out.w, &flipped) < dist_sq(&out.w, &w_star) {
        w_star = flipped.into();
    }

    let rt = rt_trace(&problem, &out.iterates, &w_star)?;
    let distances: Vec<f64> = out.iterates.iter().map(|w| signed_distance(w, &w_hat)).collect();
    let tail_len = ((out.iterates.len() as f64) * scenario.tail_fraction).ceil() as usize;
    let tail = &out.iterates[out.iterates.len() - tail_len.max(1)..];

    Ok(QuarticReport {
        case,
        seed,
        eta,
        l_hat,
        iterations: out.iterations,
        w_star,
        final_value: problem.full_value(&out.w),
        min_distance: distances.iter().copied().fold(f64::INFINITY, f64::min),
        terminal_distance: *distances.last().unwrap_or(&f64::NAN),
        oscillation_radius: max_pairwise(tail),
        n_hat: rt.n_hat,
        w_final: out.w,
    })
}

/// Factor between the recorded case (i) terminal distance and `delta_i`.
pub const BASELINE_MARGIN: f64 = 1.25;

/// Frozen outcome of the reference quartic run, written once and compared
/// against afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuarticBaseline {
    pub seed: u64,
    pub scenario: QuarticScenario,
    pub terminal_distance_i: f64,
    pub margin: f64,
    /// Tolerance on the case (i) terminal distance.
    pub delta_i: f64,
    pub n_hat_i: f64,
    pub oscillation_radius_ii: f64,
}

impl QuarticBaseline {
    pub fn measure(scenario: &QuarticScenario, seed: u64) -> Result<Self, HarnessError> {
        let i = run_quartic(scenario, QuarticCase::I, seed)?;
        let ii = run_quartic(scenario, QuarticCase::Ii, seed)?;
        Ok(Self {
            seed,
            scenario: scenario.clone(),
            terminal_distance_i: i.terminal_distance,
            margin: BASELINE_MARGIN,
            delta_i: BASELINE_MARGIN * i.terminal_distance,
            n_hat_i: i.n_hat,
            oscillation_radius_ii: ii.oscillation_radius,
        })
    }

    /// Location of the committed baseline inside this crate.
    pub fn default_path() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("baselines").join("quartic.json")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
        }
        crate::experiment::write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_names_parse() {
        assert_eq!("ii".parse::<QuarticCase>().unwrap(), QuarticCase::Ii);
        assert_eq!("1".parse::<QuarticCase>().unwrap(), QuarticCase::I);
        assert!("iii".parse::<QuarticCase>().is_err());
        assert_eq!(QuarticCase::Ii.to_string(), "ii");
    }

    #[test]
    fn short_run_is_reproducible() {
        let s = QuarticScenario { iterations: 500, ..Default::default() };
        let a = run_quartic(&s, QuarticCase::I, 3).unwrap();
        assert_eq!(a, run_quartic(&s, QuarticCase::I, 3).unwrap());
        assert!(a.min_distance <= a.terminal_distance);
        assert!(a.n_hat.is_finite() && a.n_hat > 0.0);
    }

    #[test]
    fn bad_tail_fraction() {
        let s = QuarticScenario { tail_fraction: 0.0, ..Default::default() };
        assert!(run_quartic(&s, QuarticCase::I, 0).is_err());
    }
}
