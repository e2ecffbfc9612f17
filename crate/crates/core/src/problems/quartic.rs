use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ingest::QuarticInstance;
use crate::numeric::{dist_sq, dot, norm_sq};

use super::{Objective, ProblemError, Smoothness};

/// Region over which the local smoothness of a quartic is probed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCloud {
    pub center: Vec<f64>,
    pub radius: f64,
    pub points: usize,
    pub seed: u64,
}

impl ProbeCloud {
    /// Ball around the origin that contains both planted solutions with room
    /// to spare.
    pub fn around_origin(w_hat: &[f64]) -> Self {
        Self {
            center: vec![0.0; w_hat.len()],
            radius: 1.5 * norm_sq(w_hat).sqrt().max(1.0),
            points: 128,
            seed: 0x5eed,
        }
    }

    /// Draws `points` probes: the first half on the bounding sphere, the rest
    /// uniformly inside the ball.
    pub fn sample(&self) -> Vec<Vec<f64>> {
        let d = self.center.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.points)
            .map(|k| {
                let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = norm_sq(&dir).sqrt();
                let r = if k < self.points / 2 {
                    self.radius
                } else {
                    let u: f64 = rng.random();
                    self.radius * u.powf(1.0 / d as f64)
                };
                dir.iter_mut().zip(&self.center).for_each(|(x, c)| *x = c + r * *x / norm);
                dir
            })
            .collect()
    }
}

/// Quartic recovery loss `f_i(w) = (y_i - (a_i^T w)^2)^2`.
///
/// No global Lipschitz constant exists for the gradient, so the reported
/// smoothness is a local estimate over a [`ProbeCloud`].
#[derive(Debug, Clone)]
pub struct QuarticProblem {
    inst: QuarticInstance,
    cloud: ProbeCloud,
    smoothness: f64,
    noiseless: bool,
}

impl QuarticProblem {
    pub fn new(inst: QuarticInstance) -> Self {
        let cloud = ProbeCloud::around_origin(&inst.w_hat);
        Self::with_probe_cloud(inst, cloud).expect("default probe cloud is valid")
    }

    pub fn with_probe_cloud(inst: QuarticInstance, cloud: ProbeCloud) -> Result<Self, ProblemError> {
        if cloud.center.len() != inst.d {
            return Err(ProblemError::DimensionMismatch { got: cloud.center.len(), expected: inst.d });
        }
        if !(cloud.radius > 0.0) || cloud.points < 2 {
            return Err(ProblemError::InvalidParameter(
                "probe cloud needs a positive radius and at least two points".into(),
            ));
        }
        let noiseless = inst.noise.iter().all(|&e| e == 0.0);
        let mut p = Self { inst, cloud, smoothness: f64::NAN, noiseless };
        p.smoothness = p.estimate_local_smoothness(&p.cloud.clone());
        Ok(p)
    }

    pub fn instance(&self) -> &QuarticInstance {
        &self.inst
    }

    pub fn w_hat(&self) -> &[f64] {
        &self.inst.w_hat
    }

    pub fn probe_cloud(&self) -> &ProbeCloud {
        &self.cloud
    }

    /// Hessian of `F` at `w`, row-major `d x d`:
    /// `(1/n) sum_i (12 s_i^2 - 4 y_i) a_i a_i^T` with `s_i = a_i^T w`.
    pub fn hessian(&self, w: &[f64]) -> Vec<f64> {
        let d = self.inst.d;
        let mut h = vec![0.0; d * d];
        for i in 0..self.inst.n {
            let a = self.inst.row(i);
            let s = dot(a, w);
            let c = (12.0 * s * s - 4.0 * self.inst.y[i]) / self.inst.n as f64;
            for r in 0..d {
                for q in 0..d {
                    h[r * d + q] += c * a[r] * a[q];
                }
            }
        }
        h
    }

    /// Largest gradient-difference quotient `||grad F(w) - grad F(w')|| / ||w - w'||`
    /// over all probe pairs, together with the infinitesimal pairs given by
    /// the Hessian spectral norm at each probe.
    pub fn estimate_local_smoothness(&self, cloud: &ProbeCloud) -> f64 {
        let probes = cloud.sample();
        let grads: Vec<_> = probes.iter().map(|w| self.full_grad(w)).collect();
        let mut best = 0.0f64;
        for a in 0..probes.len() {
            best = best.max(spectral_norm_sym(&self.hessian(&probes[a]), self.inst.d));
            for b in a + 1..probes.len() {
                let dw = dist_sq(&probes[a], &probes[b]).sqrt();
                if dw > 0.0 {
                    best = best.max(dist_sq(&grads[a], &grads[b]).sqrt() / dw);
                }
            }
        }
        best
    }
}

/// Spectral norm of a symmetric matrix by power iteration.
fn spectral_norm_sym(m: &[f64], d: usize) -> f64 {
    let mut v: Vec<f64> = (0..d).map(|k| 1.0 + 0.1 * k as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut next = vec![0.0; d];
        for r in 0..d {
            next[r] = dot(&m[r * d..(r + 1) * d], &v);
        }
        let norm = norm_sq(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        if (norm - lambda).abs() <= 1e-14 * norm {
            return norm;
        }
        lambda = norm;
        v = next;
    }
    lambda
}

impl Objective for QuarticProblem {
    fn name(&self) -> &str {
        "quartic"
    }

    fn n(&self) -> usize {
        self.inst.n
    }

    fn dim(&self) -> usize {
        self.inst.d
    }

    fn component_value_at(&self, i: usize, w: &[f64]) -> f64 {
        let s = dot(self.inst.row(i), w);
        let r = self.inst.y[i] - s * s;
        r * r
    }

    fn add_component_grad(&self, i: usize, w: &[f64], scale: f64, out: &mut [f64]) {
        let a = self.inst.row(i);
        let s = dot(a, w);
        let coef = -4.0 * (self.inst.y[i] - s * s) * s * scale;
        for (o, x) in out.iter_mut().zip(a) {
            *o += coef * x;
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness { value: self.smoothness, estimated: true }
    }

    fn known_stationary_point(&self) -> Option<&[f64]> {
        self.noiseless.then_some(&self.inst.w_hat[..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_quartic, NoisePlan};

    #[test]
    fn zero_noise_planted_point_is_exact() {
        let inst = generate_quartic(30, &[1.0, -0.5], &NoisePlan::None, 3).unwrap();
        let p = QuarticProblem::new(inst);
        let w = p.w_hat().to_vec();
        for i in 0..p.n() {
            assert_eq!(p.component_value(i, &w).unwrap(), 0.0);
            assert!(p.component_grad(i, &w).unwrap().iter().all(|&g| g == 0.0));
        }
        assert!(p.known_stationary_point().is_some());
    }

    #[test]
    fn gradient_vanishes_at_origin() {
        let inst = generate_quartic(30, &[1.0, -0.5], &NoisePlan::small(), 3).unwrap();
        let p = QuarticProblem::new(inst);
        for i in 0..p.n() {
            assert!(p.component_grad(i, &[0.0, 0.0]).unwrap().iter().all(|&g| g == 0.0));
        }
        assert!(p.known_stationary_point().is_none());
    }

    #[test]
    fn value_at_planted_point_is_noise_energy() {
        let inst = generate_quartic(50, &[0.3, 0.8], &NoisePlan::small(), 11).unwrap();
        let expect = norm_sq(&inst.noise) / 50.0;
        let p = QuarticProblem::new(inst);
        let got = p.full_value(&[0.3, 0.8]);
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn smoothness_estimate_is_reproducible() {
        let inst = generate_quartic(100, &[1.0, -0.5], &NoisePlan::small(), 7).unwrap();
        let a = QuarticProblem::new(inst.clone());
        let b = QuarticProblem::new(inst);
        assert_eq!(a.smoothness().value, b.smoothness().value);
        assert!(a.smoothness().estimated);
        assert!(a.smoothness().value > 0.0);
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        assert!((spectral_norm_sym(&[3.0, 0.0, 0.0, -5.0], 2) - 5.0).abs() < 1e-10);
    }
}
