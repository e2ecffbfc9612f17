//! Finite-sum objectives, fixed-step stochastic optimizers and the
//! solution-neighborhood statistics used to check SGD convergence bounds.

pub mod bounds;
pub mod diagnostics;
pub mod ingest;
pub mod numeric;
pub mod optimizers;
pub mod problems;
