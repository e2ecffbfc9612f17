//! Experiment orchestration on top of `sgdlab-core`.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod problem;
pub mod scenario;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("configs `{left}` and `{right}` describe different problems")]
    MismatchedProblems { left: String, right: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] sgdlab_core::ingest::IngestError),
    #[error(transparent)]
    Problem(#[from] sgdlab_core::problems::ProblemError),
    #[error(transparent)]
    Optim(#[from] sgdlab_core::optimizers::OptimError),
    #[error(transparent)]
    Diagnostics(#[from] sgdlab_core::diagnostics::DiagnosticsError),
    #[error(transparent)]
    Bounds(#[from] sgdlab_core::bounds::BoundError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
