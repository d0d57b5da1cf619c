//! Frequency estimation over a finite domain: channel reports debiased with a
//! right inverse, the clustered-space randomized response (GKRR), Hadamard
//! response, and central Laplace noise, with EMD error bounds.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{invalid, Error, Result};
use crate::mechanism::TransitionMechanism;
use crate::metric::{ClusteredSpace, MetricSpace};
use crate::rng;
use crate::transport::{emd_cost, Histogram, Multiset};

pub use crate::norms::{operator_norm_1_2, spectral_norm};

/// Tolerance on `A * B = I`.
pub const INVERSE_TOL: f64 = 1e-9;

/// Coefficients of GKRR on an `s x t` clustered space.
///
/// The channel is `A = a I + (b I_s + c 1_s) (x) 1_t`: every entry is `c`,
/// plus `b` within the input's cluster, plus `a` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GkrrParams {
    pub space: ClusteredSpace,
    pub alpha0: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GkrrParams {
    pub fn new(space: ClusteredSpace, alpha0: f64) -> Result<Self> {
        if !(alpha0 >= 0.0) || !alpha0.is_finite() {
            return Err(invalid(format!("alpha0 = {alpha0} must be finite and >= 0")));
        }
        let (s, t, r) = (space.s as f64, space.t as f64, space.r);
        let hi = alpha0.exp();
        let mid = ((1.0 - r) * alpha0).exp();
        let d = hi + (t - 1.0) * mid + (s - 1.0) * t;
        Ok(Self {
            space,
            alpha0,
            a: (hi - mid) / d,
            b: (mid - 1.0) / d,
            c: 1.0 / d,
        })
    }

    /// Probabilities of reporting the input itself, another point of its
    /// cluster, and a point of another cluster.
    pub fn levels(&self) -> (f64, f64, f64) {
        (self.a + self.b + self.c, self.b + self.c, self.c)
    }

    /// `(a', b', c')` with `B = a' I + (b' I_s + c' 1_s) (x) 1_t = A^{-1}`.
    pub fn inverse_coefficients(&self) -> Result<(f64, f64, f64)> {
        let (t, s, r) = (self.space.t as f64, self.space.s as f64, self.space.r);
        let hi = self.alpha0.exp();
        let mid = ((1.0 - r) * self.alpha0).exp();
        let d = hi + (t - 1.0) * mid + (s - 1.0) * t;
        let gap = hi - mid;
        let cluster = hi + (t - 1.0) * mid - t;
        if !(gap > 0.0) || !(cluster > 0.0) {
            return Err(Error::Degenerate(format!(
                "GKRR at alpha0 = {} and r = {r} has no inverse",
                self.alpha0
            )));
        }
        let a = d / gap;
        let b = -(mid - 1.0) * d / (gap * cluster);
        let c = -1.0 / cluster;
        Ok((a, b, c))
    }

    fn structured(&self, a: f64, b: f64, c: f64) -> DMatrix<f64> {
        let cs = self.space;
        let k = cs.len();
        DMatrix::from_fn(k, k, |x, y| {
            let mut v = c;
            if cs.cluster_of(x) == cs.cluster_of(y) {
                v += b;
            }
            if x == y {
                v += a;
            }
            v
        })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        self.structured(self.a, self.b, self.c)
    }
}

/// GKRR as a channel certified at `alpha0`.
pub fn gkrr_mechanism(space: ClusteredSpace, alpha0: f64) -> Result<TransitionMechanism> {
    let p = GkrrParams::new(space, alpha0)?;
    let m = p.matrix();
    let rows = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    TransitionMechanism::new(Arc::new(space.metric()?), rows, alpha0)
}

/// Closed-form inverse of the GKRR channel.
pub fn gkrr_right_inverse(p: &GkrrParams) -> Result<DMatrix<f64>> {
    let (a, b, c) = p.inverse_coefficients()?;
    Ok(p.structured(a, b, c))
}

/// Largest entry of `|A B - I|`.
pub fn right_inverse_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.nrows() || a.nrows() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            got: b.nrows(),
        });
    }
    let prod = a * b;
    let k = prod.nrows();
    Ok((0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (prod[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max))
}

/// Checks that `b` is a right inverse of the channel `a`.
pub fn verify_right_inverse(a: &TransitionMechanism, b: &DMatrix<f64>) -> Result<()> {
    let err = right_inverse_error(&a.matrix(), b)?;
    if err > INVERSE_TOL {
        return Err(Error::NotRightInverse(err));
    }
    Ok(())
}

/// Each user reports every item through `a`; the per-user report
/// frequencies are averaged into `v` and the estimate is `v * b`.
///
/// The estimate is unbiased and may have negative coordinates. User `i`
/// draws from substream `(seed, i)`.
pub fn freq_est_local(users: &[Multiset], a: &TransitionMechanism, b: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    verify_right_inverse(a, b)?;
    freq_est_unchecked(users, a, b, seed)
}

/// Output counts of `count` independent reports of `x`: a multinomial
/// draw, sampled as a chain of binomials.
pub fn report_counts<R: Rng + ?Sized>(a: &TransitionMechanism, x: usize, count: u64, rng: &mut R, out: &mut [u64]) {
    let mut left = count;
    let mut mass = 1.0;
    let row = a.row(x);
    for (y, &p) in row.iter().enumerate() {
        if left == 0 {
            break;
        }
        if y + 1 == row.len() || mass <= p {
            out[y] += left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(left, q).map(|d| d.sample(rng)).unwrap_or(0);
        out[y] += draw;
        left -= draw;
        mass -= p;
    }
}

/// `freq_est_local` without the inverse check, for repeated trials with a
/// pair that has already been verified.
pub fn freq_est_unchecked(
    users: &[Multiset],
    a: &TransitionMechanism,
    b: &DMatrix<f64>,
    seed: u64,
) -> Result<Vec<f64>> {
    if users.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (k, out) = (a.in_size(), a.out_size());
    let mut v = vec![0.0; out];
    let mut counts = vec![0u64; out];
    for (i, user) in users.iter().enumerate() {
        if user.counts().len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: user.counts().len(),
            });
        }
        if user.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = rng::substream(seed, i as u64);
        counts.fill(0);
        for (x, &c) in user.counts().iter().enumerate() {
            report_counts(a, x, c, &mut rng, &mut counts);
        }
        let weight = 1.0 / (user.size() as f64 * users.len() as f64);
        for (acc, &c) in v.iter_mut().zip(&counts) {
            *acc += c as f64 * weight;
        }
    }
    let h = DVector::from_vec(v).transpose() * b;
    Ok(h.iter().copied().collect())
}

/// Central variant: the pooled dataset is reported as one user.
pub fn freq_est_central(users: &[Multiset], a: &TransitionMechanism, b: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    freq_est_local(&[Multiset::pooled(users)?], a, b, seed)
}

/// `q1 1 + q2 H` over the `k` non-constant rows of a Sylvester Hadamard
/// matrix of order `2^ceil(log2 k) * 2`, with its right inverse.
///
/// Entries take two values in ratio `e^eps0 : 1`, so the channel is
/// `eps0`-local DP over the discrete metric.
pub fn hadamard_response(k: usize, eps0: f64) -> Result<(TransitionMechanism, DMatrix<f64>)> {
    if k == 0 {
        return Err(invalid("domain must be nonempty"));
    }
    if !(eps0 > 0.0) || !eps0.is_finite() {
        return Err(invalid(format!("eps0 = {eps0} must be finite and > 0")));
    }
    let order = 2 * k.next_power_of_two();
    let h = |x: usize, y: usize| {
        if ((x + 1) & y).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    };
    let c0 = 2.0 / (order as f64 * (eps0.exp() + 1.0));
    let q1 = c0 * (eps0.exp() + 1.0) / 2.0;
    let q2 = c0 * (eps0.exp() - 1.0) / 2.0;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|x| (0..order).map(|y| q1 + q2 * h(x, y)).collect())
        .collect();
    let inverse = DMatrix::from_fn(order, k, |y, x| h(x, y) / (order as f64 * q2));
    let mech = TransitionMechanism::new(Arc::new(MetricSpace::discrete(k)?), rows, eps0)?;
    Ok((mech, inverse))
}

/// Per-item budget that gives `(eps, delta)` user-level DP over `m` items by
/// advanced composition.
pub fn hadamard_item_budget(eps: f64, m: u64, delta: f64) -> Result<f64> {
    if !(eps > 0.0) || m == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("need eps > 0, m >= 1 and delta in (0, 1)"));
    }
    let mf = m as f64;
    Ok(eps / (mf * (mf / delta).ln()).sqrt())
}

fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `K_G / |K_G| + Lap(1 / (n eps))` per coordinate, before normalization.
pub fn laplace_freq_central_raw(pooled: &Multiset, n: u64, eps: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(invalid(format!("eps = {eps} must be > 0")));
    }
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let h = pooled.normalize()?;
    let scale = 1.0 / (n as f64 * eps);
    let mut rng = rng::stream(seed);
    Ok(h.mass().iter().map(|&p| p + laplace(&mut rng, scale)).collect())
}

/// Laplace estimate projected to the simplex by clamping and rescaling.
pub fn laplace_freq_central(pooled: &Multiset, n: u64, eps: f64, seed: u64) -> Result<Histogram> {
    let raw = laplace_freq_central_raw(pooled, n, eps, seed)?;
    Histogram::project_to_simplex(pooled.space().clone(), &raw)
}

/// Transport cost of matching mass within clusters (at most `r` per unit)
/// and then across clusters: `r ||u||_1 + sum_b |sum_c u(b, c)|`.
pub fn emd_upper_clustered(u: &[f64], space: &ClusteredSpace) -> Result<f64> {
    if u.len() != space.len() {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            got: u.len(),
        });
    }
    let total: f64 = u.iter().sum();
    if total.abs() > 1e-9 {
        return Err(invalid(format!("difference vector sums to {total}, not 0")));
    }
    let l1: f64 = u.iter().map(|v| v.abs()).sum();
    let across: f64 = u.chunks(space.t).map(|c| c.iter().sum::<f64>().abs()).sum();
    Ok(space.r * l1 + across)
}

/// Cluster-sum operator `P = I_s (x) 1_t`, `k x s`.
fn cluster_projection(space: &ClusteredSpace) -> DMatrix<f64> {
    DMatrix::from_fn(
        space.len(),
        space.s,
        |x, b| if space.cluster_of(x) == b { 1.0 } else { 0.0 },
    )
}

fn excess(norm: f64, what: &str) -> Result<f64> {
    let e = norm * norm - 1.0;
    if e < -1e-9 {
        return Err(Error::Degenerate(format!(
            "{what} has squared norm {} < 1",
            norm * norm
        )));
    }
    Ok(e.max(0.0))
}

/// Expected-EMD bound of the debiased estimator for a right inverse `b`
/// (`|Y| x k`) on a clustered space.
pub fn freq_error_bound(b: &DMatrix<f64>, space: &ClusteredSpace, m: u64, n: u64) -> Result<f64> {
    if b.ncols() != space.len() {
        return Err(Error::DimensionMismatch {
            expected: space.len(),
            got: b.ncols(),
        });
    }
    if m == 0 || n == 0 {
        return Err(invalid("m and n must be >= 1"));
    }
    let (s, t, mn) = (space.s as f64, space.t as f64, m as f64 * n as f64);
    let within = excess(operator_norm_1_2(&b.transpose()), "B^T")?;
    let across = excess(
        operator_norm_1_2(&(b * cluster_projection(space)).transpose()),
        "P^T B^T",
    )?;
    Ok(space.r * (s * t * within / mn).sqrt() + (s * across / mn).sqrt())
}

/// Closed-form GKRR error bound.
pub fn gkrr_error_bound(p: &GkrrParams, m: u64, n: u64) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(invalid("m and n must be >= 1"));
    }
    let (s, t, r) = (p.space.s as f64, p.space.t as f64, p.space.r);
    let mn = m as f64 * n as f64;
    let hi = p.alpha0.exp();
    let mid = ((1.0 - r) * p.alpha0).exp();
    let gap = hi - mid;
    let cluster = hi + (t - 1.0) * mid - t;
    if !(gap > 0.0) || !(cluster > 0.0) {
        return Err(Error::Degenerate("GKRR bound needs alpha0 > 0".into()));
    }
    Ok(r * (s * t.powi(3) / mn).sqrt() * (hi + s) / gap
        + (s * s * t * t / mn).sqrt() * (s + 2.0 * (hi - 1.0)).sqrt() / cluster)
}

/// EMD between the simplex projection of `raw` and `truth`.
pub fn emd_error(raw: &[f64], truth: &Histogram) -> Result<f64> {
    let est = Histogram::project_to_simplex(truth.space().clone(), raw)?;
    emd_cost(&est, truth)
}

/// `||raw - truth||_1`.
pub fn l1_error(raw: &[f64], truth: &Histogram) -> f64 {
    raw.iter().zip(truth.mass()).map(|(a, b)| (a - b).abs()).sum()
}
