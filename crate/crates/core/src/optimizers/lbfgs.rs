//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Used as the full-batch reference solver: on strongly convex problems it
//! drives `||grad F||` down to ~1e-12, which is where the diagnostics take
//! their `w*`.

use std::collections::VecDeque;

use serde::Serialize;

use crate::numeric::{dot, norm_sq};
use crate::problems::{Objective, WeightVector};

use super::{check_start, is_diverged, OptimError, Optimizer, RunContext, RunOutput, TraceRecorder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub max_bracket: usize,
    pub max_zoom: usize,
}

impl Default for WolfeParams {
    fn default() -> Self {
        Self { c1: 1e-4, c2: 0.9, max_bracket: 30, max_zoom: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lbfgs {
    pub memory: usize,
    pub tolerance: f64,
    pub max_iters: u64,
    pub wolfe: WolfeParams,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Self { memory: 10, tolerance: 1e-12, max_iters: 10_000, wolfe: WolfeParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LbfgsReport {
    pub iterations: u64,
    pub converged: bool,
    pub grad_norm: f64,
    /// Iterations where the line search failed and a `1/L` steepest-descent
    /// step was taken instead.
    pub fallback_steps: u64,
    pub function_evals: u64,
}

pub fn lbfgs_run(
    problem: &dyn Objective,
    w0: &[f64],
    memory: usize,
    tolerance: f64,
    max_iters: u64,
) -> Result<RunOutput, OptimError> {
    let solver = Lbfgs { memory, tolerance, max_iters, ..Lbfgs::default() };
    solver.run(problem, w0, &RunContext::default())
}

struct Point {
    w: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct Evaluator<'a> {
    problem: &'a dyn Objective,
    calls: u64,
}

impl Evaluator<'_> {
    fn at(&mut self, w: Vec<f64>) -> Point {
        self.calls += 1;
        let f = self.problem.full_value(&w);
        let g = self.problem.full_grad(&w).into_inner();
        Point { w, f, g }
    }

    fn along(&mut self, base: &Point, dir: &[f64], alpha: f64) -> (Point, f64) {
        let w = base.w.iter().zip(dir).map(|(x, p)| x + alpha * p).collect();
        let pt = self.at(w);
        let slope = dot(&pt.g, dir);
        (pt, slope)
    }
}

/// Safeguarded cubic minimizer of the interpolant through `(a, fa, da)` and
/// `(b, fb, db)`; falls back to bisection.
fn cubic_step(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc >= 0.0 {
        let d2 = (b - a).signum() * disc.sqrt();
        let x = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
        if x.is_finite() && x >= lo + margin && x <= hi - margin {
            return x;
        }
    }
    0.5 * (a + b)
}

/// Strong-Wolfe line search (bracketing then zoom). Returns the accepted
/// point, or `None` when no acceptable step was found.
fn strong_wolfe(
    eval: &mut Evaluator<'_>,
    base: &Point,
    dir: &[f64],
    alpha0: f64,
    p: &WolfeParams,
) -> Option<Point> {
    let slope0 = dot(&base.g, dir);
    // tolerate rounding in F once the decrease drops below machine precision
    let slack = 4.0 * f64::EPSILON * base.f.abs();
    let armijo = |alpha: f64, f: f64| f <= base.f + p.c1 * alpha * slope0 + slack;
    let curvature = |slope: f64| slope.abs() <= -p.c2 * slope0;

    let (mut a_prev, mut f_prev, mut s_prev) = (0.0, base.f, slope0);
    let mut alpha = alpha0;
    for k in 0..p.max_bracket {
        let (pt, slope) = eval.along(base, dir, alpha);
        if !pt.f.is_finite() {
            alpha = 0.5 * (a_prev + alpha);
            continue;
        }
        if !armijo(alpha, pt.f) || (k > 0 && pt.f > f_prev + slack) {
            return zoom(eval, base, dir, (a_prev, f_prev, s_prev), (alpha, pt.f, slope), p);
        }
        if curvature(slope) {
            return Some(pt);
        }
        if slope >= 0.0 {
            return zoom(eval, base, dir, (alpha, pt.f, slope), (a_prev, f_prev, s_prev), p);
        }
        a_prev = alpha;
        f_prev = pt.f;
        s_prev = slope;
        alpha *= 2.0;
    }
    None
}

fn zoom(
    eval: &mut Evaluator<'_>,
    base: &Point,
    dir: &[f64],
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    p: &WolfeParams,
) -> Option<Point> {
    let slope0 = dot(&base.g, dir);
    let slack = 4.0 * f64::EPSILON * base.f.abs();
    for _ in 0..p.max_zoom {
        if (hi.0 - lo.0).abs() <= f64::EPSILON * lo.0.abs().max(hi.0.abs()) {
            return None;
        }
        let alpha = cubic_step(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2);
        let (pt, slope) = eval.along(base, dir, alpha);
        if !pt.f.is_finite() || pt.f > base.f + p.c1 * alpha * slope0 + slack || pt.f > lo.1 + slack {
            hi = (alpha, pt.f, slope);
        } else {
            if slope.abs() <= -p.c2 * slope0 {
                return Some(pt);
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (alpha, pt.f, slope);
        }
    }
    None
}

/// `H_k g` by the two-loop recursion over stored `(s, y, 1/(y^T s))` triples.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / norm_sq(y);
        q.iter_mut().for_each(|x| *x *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q
}

impl Optimizer for Lbfgs {
    fn name(&self) -> &'static str {
        "lbfgs"
    }

    fn run(
        &self,
        problem: &dyn Objective,
        w0: &[f64],
        ctx: &RunContext<'_>,
    ) -> Result<RunOutput, OptimError> {
        check_start(problem, w0)?;
        if !(self.tolerance > 0.0) || self.memory == 0 {
            return Err(OptimError::InvalidParameter(
                "tolerance must be positive and memory at least 1".into(),
            ));
        }
        let n = problem.n() as u64;
        let lip = problem.smoothness().value;
        let mut eval = Evaluator { problem, calls: 0 };
        let mut rec = TraceRecorder::new(problem, ctx);
        let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(self.memory);
        let mut fallbacks = 0u64;
        let mut iters = 0u64;

        let mut cur = eval.at(w0.to_vec());
        rec.record(0, n * eval.calls, &cur.w)?;
        let mut gnorm = norm_sq(&cur.g).sqrt();

        while gnorm > self.tolerance && iters < self.max_iters {
            iters += 1;
            let mut dir: Vec<f64> = two_loop(&cur.g, &pairs).into_iter().map(|x| -x).collect();
            if !(dot(&dir, &cur.g) < 0.0) {
                pairs.clear();
                dir = cur.g.iter().map(|x| -x).collect();
            }
            let alpha0 = if pairs.is_empty() { (1.0 / norm_sq(&dir).sqrt()).min(1.0) } else { 1.0 };

            let next = match strong_wolfe(&mut eval, &cur, &dir, alpha0, &self.wolfe) {
                Some(pt) => pt,
                None => {
                    fallbacks += 1;
                    pairs.clear();
                    let w = cur.w.iter().zip(&cur.g).map(|(x, g)| x - g / lip).collect();
                    eval.at(w)
                }
            };
            if is_diverged(&next.w) || !next.f.is_finite() {
                return Err(rec.diverged(iters));
            }

            let s: Vec<f64> = next.w.iter().zip(&cur.w).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > f64::EPSILON * norm_sq(&y) && sy > 0.0 {
                if pairs.len() == self.memory {
                    pairs.pop_front();
                }
                pairs.push_back((s, y, 1.0 / sy));
            }
            let stalled = next.w == cur.w;
            cur = next;
            gnorm = norm_sq(&cur.g).sqrt();
            if rec.due(iters, self.max_iters) || gnorm <= self.tolerance {
                rec.record(iters, n * eval.calls, &cur.w)?;
            }
            if stalled && pairs.is_empty() {
                break;
            }
        }

        let report = LbfgsReport {
            iterations: iters,
            converged: gnorm <= self.tolerance,
            grad_norm: gnorm,
            fallback_steps: fallbacks,
            function_evals: eval.calls,
        };
        let (trace, iterates) = rec.finish();
        Ok(RunOutput {
            algorithm: self.name().into(),
            w: WeightVector::from(cur.w),
            trace,
            iterates,
            iterations: iters,
            component_evals: n * eval.calls,
            lbfgs: Some(report),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::QuadraticEnsemble;

    #[test]
    fn isotropic_quadratic_in_few_iterations() {
        for d in 1..6 {
            let q = QuadraticEnsemble::new(vec![0.0; d], d).unwrap();
            let w0: Vec<f64> = (0..d).map(|k| 3.0 - 2.5 * k as f64).collect();
            let out = lbfgs_run(&q, &w0, 10, 1e-12, 100).unwrap();
            let rep = out.lbfgs.unwrap();
            assert!(rep.converged);
            assert!(rep.iterations <= d as u64 + 1, "d = {d}: {rep:?}");
        }
    }

    #[test]
    fn already_stationary_returns_immediately() {
        let q = QuadraticEnsemble::scalar(&[1.0, 3.0]);
        let out = lbfgs_run(&q, &[2.0], 10, 1e-12, 100).unwrap();
        let rep = out.lbfgs.unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
        assert_eq!(&out.w[..], &[2.0]);
    }

    #[test]
    fn cubic_step_stays_inside_bracket() {
        let x = cubic_step(0.0, 1.0, -1.0, 1.0, 2.0, 3.0);
        assert!(x > 0.0 && x < 1.0);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let q = QuadraticEnsemble::new(vec![1.0, 2.0, -1.0, 0.5], 2).unwrap();
        let out = lbfgs_run(&q, &[100.0, -50.0], 5, 1e-300, 3).unwrap();
        let rep = out.lbfgs.unwrap();
        assert!(rep.iterations <= 3);
    }
}
