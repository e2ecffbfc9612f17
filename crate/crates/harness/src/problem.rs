//! Building problems from specs and solving for their reference point.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use sgdlab_core::diagnostics::better_fitting;
use sgdlab_core::ingest::{
    generate_quartic, generate_synthetic_logistic, read_libsvm_file, LabelMap, NoisePlan,
    ParseOptions, SyntheticLogisticSpec,
};
use sgdlab_core::numeric::norm_sq;
use sgdlab_core::optimizers::lbfgs_run;
use sgdlab_core::problems::{
    LogisticProblem, Objective, QuadraticEnsemble, QuarticProblem, WeightVector,
};

use crate::config::ProblemSpec;
use crate::HarnessError;

pub enum BuiltProblem {
    Logistic(LogisticProblem),
    Quartic(QuarticProblem),
    Quadratic(QuadraticEnsemble),
}

impl BuiltProblem {
    pub fn objective(&self) -> &dyn Objective {
        match self {
            BuiltProblem::Logistic(p) => p,
            BuiltProblem::Quartic(p) => p,
            BuiltProblem::Quadratic(p) => p,
        }
    }

    /// Training accuracy for classification problems.
    pub fn accuracy(&self, w: &[f64]) -> Option<f64> {
        match self {
            BuiltProblem::Logistic(p) => Some(p.accuracy(w)),
            _ => None,
        }
    }

    pub fn summary(&self) -> ProblemSummary {
        let obj = self.objective();
        let s = obj.smoothness();
        ProblemSummary {
            kind: obj.name().to_string(),
            n: obj.n(),
            dim: obj.dim(),
            smoothness: s.value,
            smoothness_estimated: s.estimated,
            strong_convexity: obj.strong_convexity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemSummary {
    pub kind: String,
    pub n: usize,
    pub dim: usize,
    pub smoothness: f64,
    pub smoothness_estimated: bool,
    pub strong_convexity: Option<f64>,
}

pub fn resolve_path(path: &Path, data_dir: Option<&Path>) -> PathBuf {
    match data_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn build_problem(spec: &ProblemSpec, data_dir: Option<&Path>) -> Result<BuiltProblem, HarnessError> {
    Ok(match spec {
        ProblemSpec::Libsvm { path, label_map, lambda, dim } => {
            let full = resolve_path(path, data_dir);
            if !full.exists() {
                return Err(HarnessError::Config(format!(
                    "dataset {} not found (set --data-dir or SGD_LAB_DATA)",
                    full.display()
                )));
            }
            let opts = ParseOptions {
                label_map: match label_map {
                    Some(pairs) => LabelMap::Explicit(pairs.iter().map(|p| (p[0], p[1])).collect()),
                    None => LabelMap::Auto,
                },
                dim_override: *dim,
            };
            let data = read_libsvm_file(&full, &opts)?;
            match lambda {
                Some(l) => BuiltProblem::Logistic(LogisticProblem::new(data, *l)?),
                None => BuiltProblem::Logistic(LogisticProblem::with_default_lambda(data)),
            }
        }
        ProblemSpec::SyntheticLogistic { n, d, flip_probability, seed, lambda } => {
            let spec = SyntheticLogisticSpec { n: *n, d: *d, flip_probability: *flip_probability, seed: *seed };
            let (data, _) = generate_synthetic_logistic(&spec)?;
            match lambda {
                Some(l) => BuiltProblem::Logistic(LogisticProblem::new(data, *l)?),
                None => BuiltProblem::Logistic(LogisticProblem::with_default_lambda(data)),
            }
        }
        ProblemSpec::Quartic { n, w_hat, case, seed } => {
            let plan = case.map(|c| c.noise_plan(*n)).unwrap_or(NoisePlan::None);
            BuiltProblem::Quartic(QuarticProblem::new(generate_quartic(*n, w_hat, &plan, *seed)?))
        }
        ProblemSpec::Quadratic { centers, dim } => {
            BuiltProblem::Quadratic(QuadraticEnsemble::new(centers.clone(), *dim)?)
        }
    })
}

/// Stationary point against which distances, r_t and the census are taken.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSolution {
    pub w: WeightVector,
    pub f_value: f64,
    pub grad_norm: f64,
    /// `None` when the point is known by construction.
    pub lbfgs_iterations: Option<u64>,
    pub converged: bool,
    pub hash: String,
}

/// SHA-256 over the little-endian bytes of a vector.
pub fn vector_hash(w: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in w {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn solution(problem: &dyn Objective, w: WeightVector, iters: Option<u64>, tol: f64) -> ReferenceSolution {
    let grad_norm = norm_sq(&problem.full_grad(&w)).sqrt();
    ReferenceSolution {
        f_value: problem.full_value(&w),
        grad_norm,
        lbfgs_iterations: iters,
        converged: grad_norm <= tol,
        hash: vector_hash(&w),
        w,
    }
}

/// Known stationary point if the problem has one, otherwise L-BFGS from the
/// origin. For quartics both `+w_hat` and `-w_hat` are used as starts and the
/// lower objective wins.
pub fn solve_reference(built: &BuiltProblem, tolerance: f64, max_iters: u64) -> Result<ReferenceSolution, HarnessError> {
    let problem = built.objective();
    if let Some(w) = problem.known_stationary_point() {
        return Ok(solution(problem, w.into(), None, tolerance.max(norm_sq(&problem.full_grad(w)).sqrt())));
    }
    let starts: Vec<Vec<f64>> = match built {
        BuiltProblem::Quartic(q) => {
            let w_hat = q.w_hat().to_vec();
            let neg = w_hat.iter().map(|x| -x).collect();
            vec![w_hat, neg]
        }
        _ => vec![vec![0.0; problem.dim()]],
    };
    let mut runs = Vec::with_capacity(starts.len());
    for s in &starts {
        runs.push(lbfgs_run(problem, s, 10, tolerance, max_iters)?);
    }
    let refs: Vec<&[f64]> = runs.iter().map(|r| &r.w[..]).collect();
    let best = better_fitting(problem, &refs).unwrap_or(0);
    let run = runs.swap_remove(best);
    let iters = run.lbfgs.as_ref().map(|r| r.iterations);
    Ok(solution(problem, run.w, iters, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_reference_is_the_mean() {
        let built = build_problem(&ProblemSpec::Quadratic { centers: vec![1.0, 3.0], dim: 1 }, None).unwrap();
        let r = solve_reference(&built, 1e-12, 100).unwrap();
        assert_eq!(&r.w[..], &[2.0]);
        assert_eq!(r.lbfgs_iterations, None);
        assert!(r.converged);
    }

    #[test]
    fn synthetic_reference_converges() {
        let spec = ProblemSpec::SyntheticLogistic { n: 40, d: 3, flip_probability: 0.1, seed: 2, lambda: None };
        let built = build_problem(&spec, None).unwrap();
        let r = solve_reference(&built, 1e-12, 1000).unwrap();
        assert!(r.converged && r.grad_norm <= 1e-12);
        assert_eq!(r.hash, vector_hash(&r.w));
    }

    #[test]
    fn missing_dataset_is_reported() {
        let spec = ProblemSpec::Libsvm { path: "nope.svm".into(), label_map: None, lambda: None, dim: None };
        assert!(matches!(build_problem(&spec, Some(Path::new("/nonexistent"))), Err(HarnessError::Config(_))));
    }

    #[test]
    fn vector_hash_is_bitwise() {
        assert_ne!(vector_hash(&[0.0]), vector_hash(&[-0.0]));
        assert_eq!(vector_hash(&[1.5, 2.0]), vector_hash(&[1.5, 2.0]));
    }
}
