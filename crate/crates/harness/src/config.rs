//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sgdlab_core::diagnostics::{DEFAULT_EPSILON_GRID, DEFAULT_MONTE_CARLO_DRAWS};
use sgdlab_core::optimizers::OptimizerParams;

use crate::scenario::QuarticCase;
use crate::HarnessError;

/// Environment variable consulted when no `--data-dir` flag is given.
pub const DATA_DIR_ENV: &str = "SGD_LAB_DATA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// Logistic regression on a LIBSVM file. Relative paths resolve against
    /// the data directory.
    Libsvm {
        path: PathBuf,
        /// Raw label to +/-1 pairs; absent means auto-detect.
        #[serde(default)]
        label_map: Option<Vec<[f64; 2]>>,
        /// Defaults to `1/n`.
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        dim: Option<usize>,
    },
    SyntheticLogistic {
        n: usize,
        d: usize,
        #[serde(default)]
        flip_probability: f64,
        seed: u64,
        #[serde(default)]
        lambda: Option<f64>,
    },
    Quartic {
        n: usize,
        w_hat: Vec<f64>,
        /// Absent means noiseless observations.
        #[serde(default)]
        case: Option<QuarticCase>,
        seed: u64,
    },
    /// `f_i(w) = ||w - c_i||^2 / 2` with row-major centers.
    Quadratic { centers: Vec<f64>, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub algorithm: String,
    #[serde(default)]
    pub params: OptimizerParams,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensusModeSpec {
    /// Exact enumeration when the run uses `b = 1`, monte-carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSpec {
    pub epsilon_grid: Vec<f64>,
    pub census_mode: CensusModeSpec,
    /// Batch size for monte-carlo censuses; defaults to the optimizer's.
    pub census_batch: Option<usize>,
    pub census_draws: usize,
    pub census_seed: u64,
    /// Stopping tolerance on `||grad F||` for the reference solve.
    pub reference_tolerance: f64,
    pub reference_max_iters: u64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        Self {
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            census_mode: CensusModeSpec::Auto,
            census_batch: None,
            census_draws: DEFAULT_MONTE_CARLO_DRAWS,
            census_seed: 0,
            reference_tolerance: 1e-12,
            reference_max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Iterations between trace rows; absent means once per epoch.
    #[serde(default)]
    pub trace_every: Option<u64>,
    /// Starting point; absent means the origin.
    #[serde(default)]
    pub w0: Option<Vec<f64>>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eta: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        let p = &mut self.optimizer.params;
        if o.eta.is_some() {
            p.eta = o.eta;
        }
        if o.batch.is_some() {
            p.batch = o.batch;
        }
        if o.epochs.is_some() {
            p.epochs = o.epochs;
            p.iterations = None;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seed list is empty".into()));
        }
        if let Some(eta) = self.optimizer.params.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(HarnessError::Config(format!("step size must be positive, got {eta}")));
            }
        }
        if self.trace_every == Some(0) {
            return Err(HarnessError::Config("trace_every must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (object keys sorted). The output
    /// directory is excluded so relocating a run keeps its identity.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("out_dir");
        }
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    /// Fully spelled-out example used by the `config-schema` subcommand.
    pub fn example() -> Self {
        Self {
            name: "mushrooms-table".into(),
            problem: ProblemSpec::Libsvm {
                path: "mushrooms.gz".into(),
                label_map: Some(vec![[1.0, 1.0], [2.0, -1.0]]),
                lambda: None,
                dim: None,
            },
            optimizer: OptimizerSpec {
                algorithm: "sgd".into(),
                params: OptimizerParams {
                    eta: Some(0.1),
                    batch: Some(1),
                    epochs: Some(100.0),
                    ..Default::default()
                },
            },
            diagnostics: DiagnosticsSpec::default(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: default_out_dir(),
            trace_every: None,
            w0: None,
        }
    }
}

/// `--data-dir` flag, else the environment variable.
pub fn resolve_data_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(
            r#"{"problem": {"kind": "quadratic", "centers": [1, 2], "dim": 1},
                "optimizer": {"algorithm": "gd", "params": {"eta": 0.5, "iterations": 3}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.diagnostics.epsilon_grid, DEFAULT_EPSILON_GRID.to_vec());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"problem": {"kind": "quadratic", "centers": [1], "dim": 1},
                      "optimizer": {"algorithm": "gd", "params": {"step": 0.5}}}"#;
        assert!(ExperimentConfig::from_json(bad).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_content() {
        let a = ExperimentConfig::example();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seeds.push(9);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::example();
        cfg.apply(&Overrides { seed: Some(3), epochs: Some(2.0), eta: Some(0.2), ..Default::default() });
        assert_eq!(cfg.seeds, vec![3]);
        assert_eq!(cfg.optimizer.params.epochs, Some(2.0));
        assert_eq!(cfg.optimizer.params.eta, Some(0.2));
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn example_round_trips() {
        let cfg = ExperimentConfig::example();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
