//! Unbounded to bounded reduction: every user's dataset is resampled with
//! replacement to a fixed size `s` before a bounded mechanism runs.

use rand::Rng;

use crate::budget::MetricBudget;
use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::transport::Multiset;

/// `s` i.i.d. draws from the empirical distribution of `k`.
pub fn project(k: &Multiset, s: u64, seed: u64) -> Result<Multiset> {
    if k.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if s == 0 {
        return Err(invalid("projection size must be >= 1"));
    }
    let mut cumulative = Vec::with_capacity(k.counts().len());
    let mut acc = 0u64;
    for &c in k.counts() {
        acc += c;
        cumulative.push(acc);
    }
    let mut rng = rng::stream(seed);
    let mut counts = vec![0u64; cumulative.len()];
    for _ in 0..s {
        let u = rng.random_range(0..acc);
        counts[cumulative.partition_point(|&c| c <= u)] += 1;
    }
    Multiset::new(k.space().clone(), counts)
}

/// Projects user `i` with seed `(seed, i)` and hands the `n` size-`s`
/// datasets to `inner` exactly once.
pub fn bounded_emd_reduction<T, F>(users: &[Multiset], s: u64, inner: F, seed: u64) -> Result<T>
where
    F: FnOnce(&[Multiset]) -> Result<T>,
{
    let projected = users
        .iter()
        .enumerate()
        .map(|(i, k)| project(k, s, rng::derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    inner(&projected)
}

/// The `(alpha, delta)` bounded budget the inner mechanism needs so that the
/// reduction is `(epsilon, 2 delta, r)`-discrete:
/// `alpha = epsilon / ((1 + sqrt 2) r + (3 / s) ln(1 / delta))`.
pub fn reduction_budget(epsilon: f64, delta: f64, r: f64, s: u64) -> Result<MetricBudget> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid(format!("epsilon = {epsilon} must be > 0")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("radius r = {r} must lie in (0, 1]")));
    }
    if s == 0 {
        return Err(invalid("projection size must be >= 1"));
    }
    let denom = (1.0 + 2f64.sqrt()) * r + 3.0 / s as f64 * (1.0 / delta).ln();
    MetricBudget::new(epsilon / denom, delta)
}

/// Bound on the EMD between coupled projections of size `s`, exceeded
/// with probability at most `delta`.
pub fn projection_bound(emd: f64, s: u64, delta: f64) -> f64 {
    (1.0 + 2f64.sqrt()) * emd + 3.0 / s as f64 * (1.0 / delta).ln()
}
