//! Solution-neighborhood statistics.
//!
//! * [`gradient_census`] measures how many (minibatch) stochastic gradients
//!   are small at a reference point: `p_eps`, the conditional mean `M_eps` of
//!   the large ones, and `M_max`.
//! * [`verify_minibatch_identity`] checks
//!   `E||g_b - grad F||^2 = (E||grad f_xi||^2 - ||grad F||^2) / b` exactly or by
//!   sampling.
//! * [`rt_trace`] accumulates the ratio of average stochastic-gradient drift
//!   to average squared full-gradient norm along an iterate sequence; its
//!   running maximum estimates the drift constant `N`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::{mean_and_stderr, norm_sq, KahanSum, KahanVec};
use crate::problems::{Objective, ProblemError, WeightVector};

/// Denominator terms below this are flagged in r_t estimates.
pub const RT_DENOMINATOR_GUARD: f64 = 1e-30;

/// Threshold grid matching the usual census table columns.
pub const DEFAULT_EPSILON_GRID: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

pub const DEFAULT_MONTE_CARLO_DRAWS: usize = 10_000;

pub const DEFAULT_EXHAUSTIVE_CAP: u64 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("epsilon grid is empty")]
    EmptyGrid,
    #[error("epsilon values must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("monte-carlo mode needs at least one draw")]
    ZeroDraws,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("exhaustive enumeration of {n}^{b} tuples exceeds the cap of {cap}")]
    ExhaustiveTooLarge { n: usize, b: usize, cap: u64 },
    #[error("iterate sequence is empty")]
    EmptySequence,
    #[error("point has length {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

fn check_point(problem: &dyn Objective, w: &[f64]) -> Result<(), DiagnosticsError> {
    if w.len() != problem.dim() {
        return Err(DiagnosticsError::DimensionMismatch { got: w.len(), expected: problem.dim() });
    }
    Ok(())
}

/// Squared norms of all component gradients at `w`.
pub fn component_grad_norms_sq(problem: &dyn Objective, w: &[f64]) -> Vec<f64> {
    let d = problem.dim();
    problem
        .component_grad_matrix(w)
        .chunks_exact(d)
        .map(norm_sq)
        .collect()
}

/// Relative error between `grad f_i(w)` and its central finite-difference
/// approximation with step `h`. The denominator is floored at `1e-8` so a
/// vanishing gradient is judged by absolute error.
pub fn finite_difference_error(
    problem: &dyn Objective,
    i: usize,
    w: &[f64],
    h: f64,
) -> Result<f64, DiagnosticsError> {
    check_point(problem, w)?;
    let analytic = problem.component_grad(i, w)?;
    let mut probe = w.to_vec();
    let numeric: Vec<f64> = (0..w.len())
        .map(|j| {
            probe[j] = w[j] + h;
            let up = problem.component_value_at(i, &probe);
            probe[j] = w[j] - h;
            let down = problem.component_value_at(i, &probe);
            probe[j] = w[j];
            (up - down) / (2.0 * h)
        })
        .collect();
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale = norm_sq(&analytic).sqrt().max(norm_sq(&numeric).sqrt()).max(1e-8);
    Ok(diff.sqrt() / scale)
}

// ---------------------------------------------------------------------------
// census

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CensusMode {
    /// Enumerate every component (`b = 1`).
    Exact,
    /// `draws` i.i.d. minibatch means of `batch` components each.
    MonteCarlo { batch: usize, draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusEntry {
    pub epsilon: f64,
    pub p: f64,
    /// Standard error of `p` in monte-carlo mode.
    pub p_stderr: Option<f64>,
    pub s_size: usize,
    /// Mean squared norm over the large set; absent when it is empty.
    pub m_eps: Option<f64>,
    /// Mean squared norm over the small set; absent when it is empty.
    pub mean_small: Option<f64>,
    /// `1 - p <= epsilon`
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCensus {
    pub reference_point: WeightVector,
    pub batch: usize,
    /// Number of enumerated components or monte-carlo draws.
    pub samples: usize,
    pub exact: bool,
    pub entries: Vec<CensusEntry>,
    pub m_max: f64,
    pub mean_sq_norm: f64,
}

impl GradientCensus {
    pub fn entry(&self, epsilon: f64) -> Option<&CensusEntry> {
        self.entries.iter().find(|e| e.epsilon == epsilon)
    }
}

fn normalized_grid(grid: &[f64]) -> Result<Vec<f64>, DiagnosticsError> {
    if grid.is_empty() {
        return Err(DiagnosticsError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(DiagnosticsError::InvalidEpsilon(bad));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

pub fn gradient_census(
    problem: &dyn Objective,
    w_ref: &[f64],
    grid: &[f64],
    mode: CensusMode,
) -> Result<GradientCensus, DiagnosticsError> {
    check_point(problem, w_ref)?;
    let grid = normalized_grid(grid)?;
    let (mut values, batch) = match mode {
        CensusMode::Exact => (component_grad_norms_sq(problem, w_ref), 1),
        CensusMode::MonteCarlo { batch, draws, seed } => {
            if draws == 0 {
                return Err(DiagnosticsError::ZeroDraws);
            }
            if batch == 0 {
                return Err(DiagnosticsError::ZeroBatch);
            }
            (minibatch_norms_sq(problem, w_ref, batch, draws, seed), batch)
        }
    };
    values.sort_by(f64::total_cmp);
    let count = values.len();
    let total = values.iter().copied().collect::<KahanSum>().value();

    let entries = grid
        .iter()
        .map(|&epsilon| {
            let s_size = values.partition_point(|&v| v <= epsilon);
            let small = values[..s_size].iter().copied().collect::<KahanSum>().value();
            let large = values[s_size..].iter().copied().collect::<KahanSum>().value();
            let p = s_size as f64 / count as f64;
            CensusEntry {
                epsilon,
                p,
                p_stderr: match mode {
                    CensusMode::Exact => None,
                    CensusMode::MonteCarlo { .. } => Some((p * (1.0 - p) / count as f64).sqrt()),
                },
                s_size,
                m_eps: (s_size < count).then(|| large / (count - s_size) as f64),
                mean_small: (s_size > 0).then(|| small / s_size as f64),
                satisfied: (count - s_size) as f64 / count as f64 <= epsilon,
            }
        })
        .collect();

    Ok(GradientCensus {
        reference_point: w_ref.into(),
        batch,
        samples: count,
        exact: matches!(mode, CensusMode::Exact),
        entries,
        m_max: values.last().copied().unwrap_or(0.0),
        mean_sq_norm: total / count as f64,
    })
}

fn minibatch_norms_sq(
    problem: &dyn Objective,
    w: &[f64],
    batch: usize,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let (n, d) = (problem.n(), problem.dim());
    let grads = problem.component_grad_matrix(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; d];
    (0..draws)
        .map(|_| {
            g.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..batch {
                let i = rng.random_range(0..n);
                for (gj, x) in g.iter_mut().zip(&grads[i * d..(i + 1) * d]) {
                    *gj += x;
                }
            }
            norm_sq(&g) / (batch * batch) as f64
        })
        .collect()
}

/// Outcome of searching the grid for `1 - p_eps <= eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpsilonCondition {
    Satisfied { epsilon: f64, p: f64, m_eps: Option<f64> },
    NoneOnGrid,
}

impl EpsilonCondition {
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            EpsilonCondition::Satisfied { epsilon, .. } => Some(*epsilon),
            EpsilonCondition::NoneOnGrid => None,
        }
    }
}

/// Smallest grid threshold with `1 - p_eps <= eps`.
pub fn check_epsilon_condition(census: &GradientCensus) -> EpsilonCondition {
    census
        .entries
        .iter()
        .find(|e| e.satisfied)
        .map(|e| EpsilonCondition::Satisfied { epsilon: e.epsilon, p: e.p, m_eps: e.m_eps })
        .unwrap_or(EpsilonCondition::NoneOnGrid)
}

/// Index of the candidate with the lowest objective value (first on ties).
pub fn better_fitting(problem: &dyn Objective, candidates: &[&[f64]]) -> Option<usize> {
    candidates
        .iter()
        .map(|w| problem.full_value(w))
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
}

// ---------------------------------------------------------------------------
// minibatch variance identity

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdentityMode {
    /// Enumerate all `n^b` ordered tuples, each with probability `n^-b`.
    Exhaustive { cap: u64 },
    Sampled { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub batch: usize,
    /// `E||(1/b) sum grad f_xi - grad F||^2`, exact or estimated.
    pub lhs: f64,
    /// `(mean_i ||grad f_i||^2 - ||grad F||^2) / b`, always exact.
    pub rhs: f64,
    pub residual: f64,
    pub lhs_stderr: Option<f64>,
    pub samples: u64,
}

pub fn verify_minibatch_identity(
    problem: &dyn Objective,
    w: &[f64],
    batch: usize,
    mode: IdentityMode,
) -> Result<IdentityReport, DiagnosticsError> {
    check_point(problem, w)?;
    if batch == 0 {
        return Err(DiagnosticsError::ZeroBatch);
    }
    let (n, d) = (problem.n(), problem.dim());
    let grads = problem.component_grad_matrix(w);
    let rows = || grads.chunks_exact(d);

    let mut acc = KahanVec::zeros(d);
    for row in rows() {
        acc.add_scaled(1.0, row);
    }
    let full: Vec<f64> = acc.into_vec().into_iter().map(|s| s / n as f64).collect();
    let mean_sq = rows().map(norm_sq).collect::<KahanSum>().value() / n as f64;
    let rhs = (mean_sq - norm_sq(&full)) / batch as f64;

    let deviation = |tuple: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut g = KahanVec::zeros(d);
        for i in tuple {
            g.add_scaled(1.0 / batch as f64, &grads[i * d..(i + 1) * d]);
        }
        let g = g.into_vec();
        g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum()
    };

    let (lhs, lhs_stderr, samples) = match mode {
        IdentityMode::Exhaustive { cap } => {
            let total = (n as u64)
                .checked_pow(batch as u32)
                .filter(|&t| t <= cap)
                .ok_or(DiagnosticsError::ExhaustiveTooLarge { n, b: batch, cap })?;
            let mut idx = vec![0usize; batch];
            let mut sum = KahanSum::new();
            for _ in 0..total {
                sum.add(deviation(&mut idx.iter().copied()));
                // odometer increment
                for slot in idx.iter_mut() {
                    *slot += 1;
                    if *slot < n {
                        break;
                    }
                    *slot = 0;
                }
            }
            (sum.value() / total as f64, None, total)
        }
        IdentityMode::Sampled { draws, seed } => {
            if draws == 0 {
                return Err(DiagnosticsError::ZeroDraws);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let devs: Vec<f64> = (0..draws)
                .map(|_| {
                    let tuple: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
                    deviation(&mut tuple.into_iter())
                })
                .collect();
            let (mean, se) = mean_and_stderr(&devs);
            (mean, Some(se), draws as u64)
        }
    };
    Ok(IdentityReport { batch, lhs, rhs, residual: (lhs - rhs).abs(), lhs_stderr, samples })
}

// ---------------------------------------------------------------------------
// r_t

/// Cached `grad f_i(w*)` for repeated drift evaluations.
pub struct ComponentDrift<'a> {
    problem: &'a dyn Objective,
    reference_grads: Vec<f64>,
}

impl<'a> ComponentDrift<'a> {
    pub fn new(problem: &'a dyn Objective, w_star: &[f64]) -> Self {
        Self { problem, reference_grads: problem.component_grad_matrix(w_star) }
    }

    /// `(1/n) sum_i ||grad f_i(w) - grad f_i(w*)||^2`
    pub fn drift(&self, w: &[f64]) -> f64 {
        let (n, d) = (self.problem.n(), self.problem.dim());
        let mut scratch = vec![0.0; d];
        let mut acc = KahanSum::new();
        for i in 0..n {
            scratch.copy_from_slice(&self.reference_grads[i * d..(i + 1) * d]);
            self.problem.add_component_grad(i, w, -1.0, &mut scratch);
            acc.add(norm_sq(&scratch));
        }
        acc.value() / n as f64
    }
}

/// Running numerator and denominator sums of r_t.
#[derive(Debug, Clone, Default)]
pub struct RtAccumulator {
    numerator: KahanSum,
    denominator: KahanSum,
}

impl RtAccumulator {
    pub fn push(&mut self, drift: f64, grad_norm_sq: f64) -> f64 {
        self.numerator.add(drift);
        self.denominator.add(grad_norm_sq);
        self.current()
    }

    pub fn numerator(&self) -> f64 {
        self.numerator.value()
    }

    pub fn denominator(&self) -> f64 {
        self.denominator.value()
    }

    pub fn current(&self) -> f64 {
        Self::ratio(self.numerator(), self.denominator())
    }

    /// The `1/(t+1)` factors cancel, so r_t is the ratio of the sums. A zero
    /// denominator gives 0 for a zero numerator and infinity otherwise.
    pub fn ratio(num: f64, den: f64) -> f64 {
        if den > 0.0 {
            num / den
        } else if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RtEstimate {
    pub numerators: Vec<f64>,
    pub denominators: Vec<f64>,
    pub running: Vec<f64>,
    pub n_hat: f64,
    /// Iterations whose `||grad F(w_k)||^2` fell below the guard threshold.
    pub degenerate: Vec<usize>,
}

pub fn rt_trace<W: AsRef<[f64]>>(
    problem: &dyn Objective,
    iterates: &[W],
    w_star: &[f64],
) -> Result<RtEstimate, DiagnosticsError> {
    if iterates.is_empty() {
        return Err(DiagnosticsError::EmptySequence);
    }
    check_point(problem, w_star)?;
    let drift = ComponentDrift::new(problem, w_star);
    let mut acc = RtAccumulator::default();
    let mut est = RtEstimate {
        numerators: Vec::with_capacity(iterates.len()),
        denominators: Vec::with_capacity(iterates.len()),
        running: Vec::with_capacity(iterates.len()),
        n_hat: 0.0,
        degenerate: Vec::new(),
    };
    for (k, w) in iterates.iter().enumerate() {
        let w = w.as_ref();
        check_point(problem, w)?;
        let num = drift.drift(w);
        let den = norm_sq(&problem.full_grad(w));
        if den < RT_DENOMINATOR_GUARD {
            est.degenerate.push(k);
        }
        let r = acc.push(num, den);
        est.numerators.push(num);
        est.denominators.push(den);
        est.running.push(r);
        est.n_hat = est.n_hat.max(r);
    }
    Ok(est)
}
