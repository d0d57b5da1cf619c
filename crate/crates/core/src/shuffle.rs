//! Item-wise release with shuffling, and the amplification bound that turns a
//! per-item level `alpha0` into a dataset-level `(alpha, delta')`.

use rand::seq::SliceRandom;

use crate::budget::{MetricBudget, Model};
use crate::error::{invalid, Error, Result};
use crate::mechanism::TransitionMechanism;
use crate::rng;
use crate::transport::Multiset;

/// Passes each item through `a` independently and returns the outputs in a
/// uniformly random order.
///
/// Item `i` draws from substream `(seed, i)`, so per-item outputs do not
/// depend on how the loop is scheduled.
pub fn priv_emd_itemwise(k: &Multiset, a: &TransitionMechanism, seed: u64) -> Result<Vec<usize>> {
    if k.counts().len() != a.in_size() {
        return Err(Error::DimensionMismatch {
            expected: a.in_size(),
            got: k.counts().len(),
        });
    }
    if k.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out: Vec<usize> = k
        .items()
        .into_iter()
        .enumerate()
        .map(|(i, x)| a.sample(x, &mut rng::substream(seed, i as u64)))
        .collect();
    out.shuffle(&mut rng::stream(rng::derive_seed(seed, u64::MAX)));
    Ok(out)
}

/// Output counts over `Y` for a list of reports.
pub fn output_counts(outputs: &[usize], out_size: usize) -> Vec<u64> {
    let mut counts = vec![0u64; out_size];
    for &y in outputs {
        counts[y] += 1;
    }
    counts
}

/// Upper limit on `alpha0` for which amplification over `items` shuffled
/// reports applies: `ln(items / (16 ln(4 items / delta)))`.
pub fn amplification_limit(items: f64, delta: f64) -> f64 {
    (items / (16.0 * (4.0 * items / delta).ln())).ln()
}

/// The amplification formula without the applicability check.
///
/// `items` is the number of shuffled reports, `x0` the number of changed
/// items and `x1` their total distance.
pub fn h_formula(items: f64, x0: f64, x1: f64, alpha0: f64, delta: f64) -> f64 {
    if x1 == 0.0 || alpha0 == 0.0 {
        return 0.0;
    }
    let c = 8.0 * (alpha0.exp() * (4.0 * x0 / delta).ln()).sqrt() / items.sqrt() + 8.0 * alpha0.exp() / items;
    // (e^z - 1) / (e^z + 1) = tanh(z / 2)
    let ratio = (alpha0 * x1 / x0 / 2.0).tanh();
    x0 * (ratio * c).ln_1p()
}

fn check_h_args(items: f64, x0: f64, x1: f64, alpha0: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(x0 > 0.0 && x0 <= items) {
        return Err(invalid(format!("x0 = {x0} must lie in (0, {items}]")));
    }
    if !(x1 >= 0.0) {
        return Err(invalid(format!("x1 = {x1} must be >= 0")));
    }
    if !(alpha0 >= 0.0) || !alpha0.is_finite() {
        return Err(invalid(format!("alpha0 = {alpha0} must be finite and >= 0")));
    }
    Ok(())
}

/// `h(items; x0, x1)`, rejecting `alpha0` at or above the applicability limit.
pub fn h_bound(items: u64, x0: f64, x1: f64, alpha0: f64, delta: f64) -> Result<f64> {
    let m = items as f64;
    check_h_args(m, x0, x1, alpha0, delta)?;
    let limit = amplification_limit(m, delta);
    if !(alpha0 < limit) {
        return Err(Error::AmplificationInapplicable { alpha0, limit });
    }
    Ok(h_formula(m, x0, x1, alpha0, delta))
}

/// What to do when `alpha0` is outside the range the amplification bound
/// covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Applicability {
    /// Return an error.
    #[default]
    Strict,
    /// Evaluate the formula anyway and report `condition_met = false`.
    FormulaOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplificationResult {
    pub alpha_eff: f64,
    pub delta_eff: f64,
    /// Maximizer of `h(w) / w`; 0 means the supremum is the `w -> 0` limit.
    pub w_star: f64,
    pub condition_met: bool,
}

impl AmplificationResult {
    /// `delta_eff >= 1` makes the guarantee vacuous.
    pub fn delta_warning(&self) -> bool {
        self.delta_eff >= 1.0
    }
}

fn shuffled_items(m: u64, model: Model) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    Ok(match model {
        Model::Local => m as f64,
        Model::Central { n } => {
            if n == 0 {
                return Err(invalid("central model needs n >= 1"));
            }
            m as f64 * n as f64
        }
    })
}

const GRID: usize = 10_000;

/// Dataset-level budget of `priv_emd_itemwise` with an `alpha0` channel
/// over datasets of `m` items.
pub fn effective_budget(alpha0: f64, delta: f64, m: u64, model: Model) -> Result<AmplificationResult> {
    effective_budget_with(alpha0, delta, m, model, Applicability::Strict)
}

pub fn effective_budget_with(
    alpha0: f64,
    delta: f64,
    m: u64,
    model: Model,
    policy: Applicability,
) -> Result<AmplificationResult> {
    let items = shuffled_items(m, model)?;
    let x0 = m as f64;
    check_h_args(items, x0, 0.0, alpha0, delta)?;
    let limit = amplification_limit(items, delta);
    let condition_met = alpha0 < limit;
    if !condition_met && policy == Applicability::Strict {
        return Err(Error::AmplificationInapplicable { alpha0, limit });
    }
    if alpha0 == 0.0 {
        return Ok(AmplificationResult {
            alpha_eff: 0.0,
            delta_eff: delta,
            w_star: 0.0,
            condition_met,
        });
    }
    let g = |w: f64| h_formula(items, x0, x0 * w, alpha0, delta) / w;

    let mut best_i = 1;
    let mut best = g(1.0 / GRID as f64);
    for i in 2..=GRID {
        let v = g(i as f64 / GRID as f64);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let lo = (best_i - 1) as f64 / GRID as f64;
    let hi = ((best_i + 1).min(GRID)) as f64 / GRID as f64;
    let (mut w_star, refined) = golden_max(&g, lo.max(f64::MIN_POSITIVE), hi);
    if refined < best {
        w_star = best_i as f64 / GRID as f64;
    } else {
        best = refined;
    }

    // First-order expansion of h(w)/w at w -> 0.
    let c = 8.0 * (alpha0.exp() * (4.0 * x0 / delta).ln()).sqrt() / items.sqrt() + 8.0 * alpha0.exp() / items;
    let at_zero = alpha0 * x0 / 2.0 * c;
    if at_zero >= best {
        best = at_zero;
        w_star = 0.0;
    }

    let delta_eff = delta * h_formula(items, x0, x0, alpha0, delta).exp();
    Ok(AmplificationResult {
        alpha_eff: best,
        delta_eff,
        w_star,
        condition_met,
    })
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() <= 1e-14 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CalibrationMode {
    /// Largest `alpha0` whose exact amplified level meets the target.
    #[default]
    Exact,
    /// Closed-form two-branch rule.
    Asymptotic,
}

impl std::str::FromStr for CalibrationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "asymptotic" => Ok(Self::Asymptotic),
            other => Err(Error::Parse(format!("unknown calibration mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Asymptotic => "asymptotic",
        })
    }
}

/// Per-item level `alpha0` that makes `priv_emd_itemwise` meet `target`.
pub fn calibrate_alpha0(target: &MetricBudget, m: u64, model: Model, mode: CalibrationMode) -> Result<f64> {
    let items = shuffled_items(m, model)?;
    if target.alpha == 0.0 {
        return Ok(0.0);
    }
    if !(target.delta > 0.0) {
        return Err(invalid("amplification needs delta > 0"));
    }
    match mode {
        CalibrationMode::Exact => {
            let limit = amplification_limit(items, target.delta);
            let hi_bound = limit - 1e-9;
            if !(hi_bound > 0.0) {
                return Err(Error::Infeasible(format!(
                    "amplification needs alpha0 < {limit:.4}, which is not positive for {items} shuffled items"
                )));
            }
            let eff = |a0: f64| effective_budget(a0, target.delta, m, model).map(|r| r.alpha_eff);
            if eff(hi_bound)? <= target.alpha {
                return Ok(hi_bound);
            }
            let (mut lo, mut hi) = (0.0, hi_bound);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if eff(mid)? <= target.alpha {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
        CalibrationMode::Asymptotic => {
            let mf = m as f64;
            let l = (mf * ((4.0 * mf / target.delta).ln() + target.alpha)).sqrt();
            let (a, cap) = match model {
                Model::Local => (target.alpha, mf),
                Model::Central { n } => {
                    let root = (n as f64).sqrt();
                    (target.alpha * root, mf * root)
                }
            };
            if a <= 32.0 * l {
                Ok(a / (32.0 * l))
            } else if a < cap {
                Ok(2.0 * (a / (16.0 * l)).ln())
            } else {
                Err(Error::Infeasible(format!(
                    "target {} is beyond the range of the closed-form rule",
                    target.alpha
                )))
            }
        }
    }
}

/// `m * alpha0`: the level from plain composition over `m` items.
pub fn composition_baseline(alpha0: f64, m: u64) -> f64 {
    m as f64 * alpha0
}

/// The larger of the composition choice `alpha / m` and the exact amplified
/// calibration, when amplification applies.
pub fn best_alpha0(target: &MetricBudget, m: u64, model: Model) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    let composed = target.alpha / m as f64;
    match calibrate_alpha0(target, m, model, CalibrationMode::Exact) {
        Ok(a0) => Ok(a0.max(composed)),
        Err(Error::Infeasible(_)) => Ok(composed),
        Err(e) => Err(e),
    }
}
