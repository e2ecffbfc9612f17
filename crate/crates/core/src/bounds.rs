//! Closed-form right-hand sides of the fixed-step SGD convergence bounds and
//! the horizons after which they reach their plateau.
//!
//! Each regime has a general form, driven by `(p_eps, M_eps)` and the exact
//! step-size factors, and a simplified form valid under the stricter step
//! rule plus `1 - p_eps <= eps`, which is what the horizon formulas solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BoundError {
    #[error("step size {eta} violates {rule} (limit {limit})")]
    StepSize { eta: f64, limit: f64, rule: &'static str },
    #[error("`{0}` must be positive and finite, got {1}")]
    NonPositive(&'static str, f64),
    #[error("p_eps = {0} is outside [0, 1]")]
    Probability(f64),
    #[error("1 - p_eps = {gap} exceeds eps = {epsilon}")]
    EpsilonCondition { gap: f64, epsilon: f64 },
    #[error("missing input `{0}`")]
    Missing(&'static str),
    #[error("iteration index {0} is outside the valid range")]
    Time(f64),
}

/// Problem constants, census values and starting quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub mu: Option<f64>,
    pub l: f64,
    pub eta: f64,
    pub batch: usize,
    pub epsilon: f64,
    pub p_eps: f64,
    /// Absent when `p_eps = 1`.
    pub m_eps: Option<f64>,
    /// `||w0 - w*||^2`
    pub dist0_sq: Option<f64>,
    /// `F(w0) - F*`
    pub f_gap: Option<f64>,
    /// Drift constant of the nonconvex regime.
    pub n_drift: Option<f64>,
}

impl BoundInputs {
    pub fn new(l: f64, eta: f64, epsilon: f64, p_eps: f64) -> Self {
        Self {
            mu: None,
            l,
            eta,
            batch: 1,
            epsilon,
            p_eps,
            m_eps: None,
            dist0_sq: None,
            f_gap: None,
            n_drift: None,
        }
    }

    fn validate(&self) -> Result<(), BoundError> {
        positive("L", self.l)?;
        positive("eta", self.eta)?;
        positive("epsilon", self.epsilon)?;
        if !(0.0..=1.0).contains(&self.p_eps) {
            return Err(BoundError::Probability(self.p_eps));
        }
        if let Some(m) = self.m_eps {
            if !(m.is_finite() && m >= 0.0) {
                return Err(BoundError::NonPositive("M_eps", m));
            }
        }
        Ok(())
    }

    fn mu(&self) -> Result<f64, BoundError> {
        positive("mu", self.mu.ok_or(BoundError::Missing("mu"))?)
    }

    fn dist0_sq(&self) -> Result<f64, BoundError> {
        non_negative("dist0_sq", self.dist0_sq.ok_or(BoundError::Missing("dist0_sq"))?)
    }

    fn f_gap(&self) -> Result<f64, BoundError> {
        non_negative("f_gap", self.f_gap.ok_or(BoundError::Missing("f_gap"))?)
    }

    fn n_drift(&self) -> Result<f64, BoundError> {
        positive("N", self.n_drift.ok_or(BoundError::Missing("n_drift"))?)
    }

    /// `(1 - p_eps) M_eps`, exactly zero when `p_eps = 1`.
    pub fn large_mass(&self) -> Result<f64, BoundError> {
        if self.p_eps == 1.0 {
            return Ok(0.0);
        }
        let m = self.m_eps.ok_or(BoundError::Missing("m_eps"))?;
        Ok((1.0 - self.p_eps) * m)
    }

    /// `p_eps eps + (1 - p_eps) M_eps`
    pub fn noise(&self) -> Result<f64, BoundError> {
        Ok(self.p_eps * self.epsilon + self.large_mass()?)
    }

    fn one_plus_m(&self) -> f64 {
        1.0 + self.m_eps.unwrap_or(0.0)
    }

    fn require_condition(&self) -> Result<(), BoundError> {
        let gap = 1.0 - self.p_eps;
        // p_eps usually arrives as a rounded fraction, so 1 - p can land a
        // few ulps above an epsilon it equals exactly
        if gap > self.epsilon * (1.0 + 8.0 * f64::EPSILON) {
            return Err(BoundError::EpsilonCondition { gap, epsilon: self.epsilon });
        }
        Ok(())
    }

    fn require_step(&self, limit: f64, strict: bool, rule: &'static str) -> Result<(), BoundError> {
        let ok = if strict { self.eta < limit } else { self.eta <= limit };
        if ok {
            Ok(())
        } else {
            Err(BoundError::StepSize { eta: self.eta, limit, rule })
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64, BoundError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(BoundError::NonPositive(name, v))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<f64, BoundError> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(BoundError::NonPositive(name, v))
    }
}

fn time(t: f64, min_exclusive: Option<f64>) -> Result<f64, BoundError> {
    let ok = match min_exclusive {
        Some(lo) => t > lo,
        None => t >= 0.0,
    };
    if ok && !t.is_nan() {
        Ok(t)
    } else {
        Err(BoundError::Time(t))
    }
}

/// Horizon `T` and the level the simplified bound is guaranteed below for
/// `t >= T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Horizon {
    pub t: f64,
    pub plateau: f64,
}

// ---------------------------------------------------------------------------
// strongly convex

/// `(1 - mu eta (1 - eta L))^t ||w0 - w*||^2 + 2 eta / (mu (1 - eta L)) * noise`.
/// The step must satisfy `eta < 1/L` so the second factor stays finite.
pub fn strongly_convex_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    inputs.validate()?;
    let t = time(t, None)?;
    let mu = inputs.mu()?;
    inputs.require_step(1.0 / inputs.l, true, "eta < 1/L")?;
    let (eta, l) = (inputs.eta, inputs.l);
    let slack = 1.0 - eta * l;
    let rate = 1.0 - mu * eta * slack;
    if !(0.0..1.0).contains(&rate) {
        return Err(BoundError::NonPositive("1 - mu eta (1 - eta L)", rate));
    }
    Ok(rate.powf(t) * inputs.dist0_sq()? + 2.0 * eta / (mu * slack) * inputs.noise()?)
}

pub fn strongly_convex_asymptote(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    let mu = inputs.mu()?;
    inputs.require_step(1.0 / inputs.l, true, "eta < 1/L")?;
    Ok(2.0 * inputs.eta / (mu * (1.0 - inputs.eta * inputs.l)) * inputs.noise()?)
}

fn strongly_convex_simplified_pre(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    let mu = inputs.mu()?;
    inputs.require_step(0.5 / inputs.l, false, "eta <= 1/(2L)")?;
    inputs.require_condition()?;
    if mu * inputs.eta > 1.0 {
        return Err(BoundError::NonPositive("1 - mu eta", 1.0 - mu * inputs.eta));
    }
    Ok(mu)
}

/// `(1 - mu eta)^t ||w0 - w*||^2 + (2 eta / mu)(1 + M_eps) eps`.
pub fn strongly_convex_simplified_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    let mu = strongly_convex_simplified_pre(inputs)?;
    let t = time(t, None)?;
    let eta = inputs.eta;
    Ok((1.0 - mu * eta).powf(t) * inputs.dist0_sq()?
        + 2.0 * eta / mu * inputs.one_plus_m() * inputs.epsilon)
}

/// `T = log(mu ||w0 - w*||^2 / (2 eta (1 + M_eps) eps)) / (mu eta)`, zero when
/// the log argument is at most one; plateau `(4 eta / mu)(1 + M_eps) eps`.
pub fn strongly_convex_horizon(inputs: &BoundInputs) -> Result<Horizon, BoundError> {
    let mu = strongly_convex_simplified_pre(inputs)?;
    let eta = inputs.eta;
    let level = 2.0 * eta * inputs.one_plus_m() * inputs.epsilon;
    let arg = mu * inputs.dist0_sq()? / level;
    let t = if arg > 1.0 { arg.ln() / (mu * eta) } else { 0.0 };
    Ok(Horizon { t, plateau: 2.0 * level / mu })
}

// ---------------------------------------------------------------------------
// convex

/// Bound on the running average of `F(w_k) - F*` over `k = 0..=t`:
/// `||w0 - w*||^2 / (2 eta (1 - eta L) t) + eta / (1 - eta L) * noise`.
pub fn convex_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    inputs.validate()?;
    let t = time(t, Some(0.0))?;
    inputs.require_step(1.0 / inputs.l, true, "eta < 1/L")?;
    let (eta, slack) = (inputs.eta, 1.0 - inputs.eta * inputs.l);
    Ok(inputs.dist0_sq()? / (2.0 * eta * slack * t) + eta / slack * inputs.noise()?)
}

pub fn convex_asymptote(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    inputs.require_step(1.0 / inputs.l, true, "eta < 1/L")?;
    Ok(inputs.eta / (1.0 - inputs.eta * inputs.l) * inputs.noise()?)
}

fn convex_simplified_pre(inputs: &BoundInputs) -> Result<(), BoundError> {
    inputs.validate()?;
    inputs.require_step(0.5 / inputs.l, false, "eta <= 1/(2L)")?;
    inputs.require_condition()
}

/// `||w0 - w*||^2 / (eta t) + 2 eta (1 + M_eps) eps`.
pub fn convex_simplified_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    convex_simplified_pre(inputs)?;
    let t = time(t, Some(0.0))?;
    let eta = inputs.eta;
    Ok(inputs.dist0_sq()? / (eta * t) + 2.0 * eta * inputs.one_plus_m() * inputs.epsilon)
}

/// `T = ||w0 - w*||^2 / (2 eta^2 (1 + M_eps) eps)`; plateau `4 eta (1 + M_eps) eps`.
pub fn convex_horizon(inputs: &BoundInputs) -> Result<Horizon, BoundError> {
    convex_simplified_pre(inputs)?;
    let eta = inputs.eta;
    let level = 2.0 * eta * inputs.one_plus_m() * inputs.epsilon;
    Ok(Horizon { t: inputs.dist0_sq()? / (eta * level), plateau: 2.0 * level })
}

// ---------------------------------------------------------------------------
// nonconvex

fn nonconvex_slack(inputs: &BoundInputs) -> Result<f64, BoundError> {
    let n = inputs.n_drift()?;
    inputs.require_step(1.0 / (inputs.l * n), true, "eta < 1/(L N)")?;
    Ok(1.0 - inputs.l * inputs.eta * n)
}

/// Bound on the running average of `||grad F(w_k)||^2` over `k = 0..=t`:
/// `(F(w0) - F*) / (eta (1 - L eta N)(t + 1)) + L eta / (1 - L eta N) * (eps + (1 - p_eps) M_eps)`.
pub fn nonconvex_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    inputs.validate()?;
    let t = time(t, None)?;
    let slack = nonconvex_slack(inputs)?;
    let (l, eta) = (inputs.l, inputs.eta);
    Ok(inputs.f_gap()? / (eta * slack * (t + 1.0))
        + l * eta / slack * (inputs.epsilon + inputs.large_mass()?))
}

pub fn nonconvex_asymptote(inputs: &BoundInputs) -> Result<f64, BoundError> {
    inputs.validate()?;
    let slack = nonconvex_slack(inputs)?;
    Ok(inputs.l * inputs.eta / slack * (inputs.epsilon + inputs.large_mass()?))
}

fn nonconvex_simplified_pre(inputs: &BoundInputs) -> Result<(), BoundError> {
    inputs.validate()?;
    let n = inputs.n_drift()?;
    inputs.require_step(0.5 / (inputs.l * n), false, "eta <= 1/(2 L N)")?;
    inputs.require_condition()
}

/// `2 (F(w0) - F*) / (eta (t + 1)) + 2 L eta (1 + M_eps) eps`.
pub fn nonconvex_simplified_bound(inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
    nonconvex_simplified_pre(inputs)?;
    let t = time(t, None)?;
    let (l, eta) = (inputs.l, inputs.eta);
    Ok(2.0 * inputs.f_gap()? / (eta * (t + 1.0))
        + 2.0 * l * eta * inputs.one_plus_m() * inputs.epsilon)
}

/// `T = (F(w0) - F*) / (L eta^2 (1 + M_eps) eps)`; plateau `4 L eta (1 + M_eps) eps`.
pub fn nonconvex_horizon(inputs: &BoundInputs) -> Result<Horizon, BoundError> {
    nonconvex_simplified_pre(inputs)?;
    let level = inputs.l * inputs.eta * inputs.one_plus_m() * inputs.epsilon;
    Ok(Horizon { t: inputs.f_gap()? / (inputs.eta * level), plateau: 4.0 * level })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    StronglyConvex,
    Convex,
    Nonconvex,
}

impl Regime {
    pub fn bound(self, inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
        match self {
            Regime::StronglyConvex => strongly_convex_bound(inputs, t),
            Regime::Convex => convex_bound(inputs, t),
            Regime::Nonconvex => nonconvex_bound(inputs, t),
        }
    }

    pub fn simplified_bound(self, inputs: &BoundInputs, t: f64) -> Result<f64, BoundError> {
        match self {
            Regime::StronglyConvex => strongly_convex_simplified_bound(inputs, t),
            Regime::Convex => convex_simplified_bound(inputs, t),
            Regime::Nonconvex => nonconvex_simplified_bound(inputs, t),
        }
    }

    pub fn horizon(self, inputs: &BoundInputs) -> Result<Horizon, BoundError> {
        match self {
            Regime::StronglyConvex => strongly_convex_horizon(inputs),
            Regime::Convex => convex_horizon(inputs),
            Regime::Nonconvex => nonconvex_horizon(inputs),
        }
    }

    pub fn asymptote(self, inputs: &BoundInputs) -> Result<f64, BoundError> {
        match self {
            Regime::StronglyConvex => strongly_convex_asymptote(inputs),
            Regime::Convex => convex_asymptote(inputs),
            Regime::Nonconvex => nonconvex_asymptote(inputs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn sc(mu: f64, l: f64, eta: f64, dist0_sq: f64, p: f64, eps: f64) -> BoundInputs {
        BoundInputs { mu: Some(mu), dist0_sq: Some(dist0_sq), ..BoundInputs::new(l, eta, eps, p) }
    }

    #[test]
    fn strongly_convex_hand_values() {
        let b = strongly_convex_bound(&sc(1.0, 1.0, 0.5, 4.0, 1.0, 0.01), 2.0).unwrap();
        assert!(rel(b, 2.27) < 1e-12, "{b}");

        let zero = strongly_convex_bound(&sc(1.0, 1.0, 0.5, 4.0, 1.0, 1e-300), 0.0).unwrap();
        assert!(rel(zero, 4.0) < 1e-12);

        let far = strongly_convex_bound(&sc(1.0, 1.0, 0.5, 4.0, 1.0, 0.01), 1e6).unwrap();
        let asym = strongly_convex_asymptote(&sc(1.0, 1.0, 0.5, 4.0, 1.0, 0.01)).unwrap();
        assert!(rel(far, asym) < 1e-12);
    }

    #[test]
    fn strongly_convex_horizon_values() {
        let inp = sc(0.1, 1.0, 0.1, 1.0, 1.0, 1e-3);
        let h = strongly_convex_horizon(&inp).unwrap();
        assert!(rel(h.t, 100.0 * 500f64.ln()) < 1e-12);
        assert!((h.t - 621.46).abs() < 0.01);
        assert!(rel(h.plateau, 4e-3) < 1e-12);

        let close = sc(0.1, 1.0, 0.1, 1e-4, 1.0, 1e-3);
        assert_eq!(strongly_convex_horizon(&close).unwrap().t, 0.0);

        let big_step = sc(1.0, 1.0, 1.0, 1.0, 1.0, 1e-3);
        assert!(matches!(strongly_convex_horizon(&big_step), Err(BoundError::StepSize { .. })));

        let mut cond = sc(0.1, 1.0, 0.1, 1.0, 0.9, 1e-3);
        cond.m_eps = Some(2.0);
        assert!(matches!(strongly_convex_horizon(&cond), Err(BoundError::EpsilonCondition { .. })));
    }

    #[test]
    fn convex_hand_values() {
        let inp = BoundInputs { dist0_sq: Some(1.0), ..BoundInputs::new(1.0, 0.1, 1e-3, 1.0) };
        let b = convex_bound(&inp, 100.0).unwrap();
        let expect = 1.0 / (2.0 * 0.1 * 0.9 * 100.0) + (0.1 / 0.9) * 1e-3;
        assert!(rel(b, expect) < 1e-12);
        assert!((b - 0.05567).abs() < 5e-6);

        let h = convex_horizon(&inp).unwrap();
        assert!(rel(h.t, 50_000.0) < 1e-12);
        assert!(rel(h.plateau, 4e-4) < 1e-12);
        assert!(convex_bound(&inp, 0.0).is_err());
    }

    #[test]
    fn nonconvex_hand_values() {
        let inp = BoundInputs {
            f_gap: Some(1.0),
            n_drift: Some(10.0),
            ..BoundInputs::new(1.0, 0.01, 1e-3, 1.0)
        };
        let b = nonconvex_bound(&inp, 999.0).unwrap();
        let expect = 1.0 / (0.01 * 0.9 * 1000.0) + (0.01 / 0.9) * 1e-3;
        assert!(rel(b, expect) < 1e-12);
        assert!((b - 0.11112).abs() < 5e-6);

        let too_big = BoundInputs { n_drift: Some(100.0), ..inp };
        assert!(matches!(nonconvex_bound(&too_big, 1.0), Err(BoundError::StepSize { .. })));
        let absent = BoundInputs { n_drift: None, ..inp };
        assert_eq!(nonconvex_bound(&absent, 1.0), Err(BoundError::Missing("n_drift")));
    }

    #[test]
    fn full_probability_ignores_large_mean() {
        let mut inp = sc(1.0, 1.0, 0.5, 4.0, 1.0, 0.01);
        inp.m_eps = Some(f64::MAX);
        assert!(rel(strongly_convex_bound(&inp, 2.0).unwrap(), 2.27) < 1e-12);
        let missing = sc(1.0, 1.0, 0.5, 4.0, 0.5, 0.01);
        assert_eq!(strongly_convex_bound(&missing, 2.0), Err(BoundError::Missing("m_eps")));
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(
            strongly_convex_bound(&sc(1.0, 1.0, 0.5, 4.0, 1.5, 0.01), 1.0),
            Err(BoundError::Probability(_))
        ));
        let no_mu = BoundInputs { dist0_sq: Some(1.0), ..BoundInputs::new(1.0, 0.5, 0.01, 1.0) };
        assert_eq!(strongly_convex_bound(&no_mu, 1.0), Err(BoundError::Missing("mu")));
        assert!(strongly_convex_bound(&sc(1.0, 1.0, 1.0, 4.0, 1.0, 0.01), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn bounds_non_increasing_in_t(
            l in 0.5f64..10.0,
            frac in 0.01f64..0.99,
            mu_frac in 0.01f64..1.0,
            d0 in 0.0f64..100.0,
            p in 0.0f64..=1.0,
            m in 0.0f64..10.0,
            n in 1.0f64..5.0,
            t in 1.0f64..1e5,
            dt in 0.0f64..1e4,
        ) {
            let eta = frac / l;
            let inp = BoundInputs {
                mu: Some(mu_frac * l),
                m_eps: Some(m),
                dist0_sq: Some(d0),
                f_gap: Some(d0),
                n_drift: Some(n),
                ..BoundInputs::new(l, eta, 1e-3, p)
            };
            for r in [Regime::StronglyConvex, Regime::Convex] {
                prop_assert!(r.bound(&inp, t + dt).unwrap() <= r.bound(&inp, t).unwrap());
            }
            let nc = BoundInputs { eta: frac / (l * n), ..inp };
            prop_assert!(nonconvex_bound(&nc, t + dt).unwrap() <= nonconvex_bound(&nc, t).unwrap());
        }
    }
}
