//! Privacy budgets, the requirement-driven choice of `alpha`, and group
//! privacy arithmetic for discrete budgets.

use crate::error::{invalid, Result};

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta) {
        return Err(invalid(format!("delta = {delta} must lie in [0, 1)")));
    }
    Ok(())
}

/// Trust model: each user randomizes locally, or a curator holds the
/// datasets of `n` users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Local,
    Central { n: u64 },
}

/// `(alpha, delta)` budget for EMD-metric privacy. `alpha` has units of
/// inverse EMD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricBudget {
    pub alpha: f64,
    pub delta: f64,
}

impl MetricBudget {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha = {alpha} must be finite and >= 0")));
        }
        check_delta(delta)?;
        Ok(Self { alpha, delta })
    }
}

/// `(epsilon, delta, r)` budget: every change of EMD at most `r` is
/// protected at `(epsilon, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub r: f64,
}

impl DiscreteBudget {
    pub fn new(epsilon: f64, delta: f64, r: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid(format!("epsilon = {epsilon} must be finite and >= 0")));
        }
        check_delta(delta)?;
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid(format!("radius r = {r} must lie in (0, 1]")));
        }
        Ok(Self { epsilon, delta, r })
    }
}

/// "Protect a change of average distance `q` to a fraction `tau` of the
/// dataset with privacy loss at most `epsilon_max`."
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requirement {
    pub q: f64,
    pub tau: f64,
    pub epsilon_max: f64,
}

impl Requirement {
    pub fn new(q: f64, tau: f64, epsilon_max: f64) -> Result<Self> {
        let req = Self { q, tau, epsilon_max };
        req.validate()?;
        Ok(req)
    }

    fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(invalid(format!("distance q = {} must lie in (0, 1]", self.q)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(invalid(format!("fraction tau = {} must lie in (0, 1]", self.tau)));
        }
        if !(self.epsilon_max > 0.0) {
            return Err(invalid(format!("epsilon_max = {} must be > 0", self.epsilon_max)));
        }
        Ok(())
    }
}

/// The largest `alpha` meeting every requirement: `min epsilon_max / (q tau)`.
pub fn alpha_from_requirements(reqs: &[Requirement]) -> Result<f64> {
    if reqs.is_empty() {
        return Err(invalid("no requirements given"));
    }
    let mut alpha = f64::INFINITY;
    for req in reqs {
        req.validate()?;
        let change = req.q * req.tau;
        if change <= 0.0 {
            return Err(invalid("q * tau underflows to zero"));
        }
        alpha = alpha.min(req.epsilon_max / change);
    }
    Ok(alpha)
}

/// How `delta` grows under group privacy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaInflation {
    /// `delta * exp(ceil(d / r))`.
    #[default]
    Steps,
    /// `delta * exp(epsilon * ceil(d / r))`, the variant tabulated alongside
    /// the definitions.
    EpsilonSteps,
}

/// `ceil(d / r)`, snapping quotients within rounding error of an integer.
pub fn group_steps(d: f64, r: f64) -> u64 {
    let q = d / r;
    let nearest = q.round();
    let steps = if (q - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        q.ceil()
    };
    steps.max(1.0) as u64
}

/// Effective `(epsilon, delta)` for two datasets at EMD `d` under a discrete
/// budget.
pub fn group_privacy(b: &DiscreteBudget, d: f64) -> Result<(f64, f64)> {
    group_privacy_with(b, d, DeltaInflation::Steps)
}

pub fn group_privacy_with(b: &DiscreteBudget, d: f64, inflation: DeltaInflation) -> Result<(f64, f64)> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(invalid(format!("distance d = {d} must be > 0")));
    }
    let steps = group_steps(d, b.r) as f64;
    let epsilon = b.epsilon * steps;
    let delta = match inflation {
        DeltaInflation::Steps => b.delta * steps.exp(),
        DeltaInflation::EpsilonSteps => b.delta * epsilon.exp(),
    };
    Ok((epsilon, delta))
}
