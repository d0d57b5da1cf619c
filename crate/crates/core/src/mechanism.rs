//! Finite randomizers `A : X -> Y` given by a row-stochastic table.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::metric::MetricSpace;

/// Row sums must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Relative slack on the certification ratio, for rounding in the entries.
const CERT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct TransitionMechanism {
    space: Arc<MetricSpace>,
    out_size: usize,
    /// Row-major `|X| x |Y|`.
    probs: Vec<f64>,
    /// Row-wise cumulative sums for sampling.
    cumulative: Vec<f64>,
    alpha0: f64,
}

impl TransitionMechanism {
    /// Builds the channel and checks `A[x,y] <= exp(alpha0 d(x,x')) A[x',y]`
    /// for every `x, x', y`.
    pub fn new(space: Arc<MetricSpace>, rows: Vec<Vec<f64>>, alpha0: f64) -> Result<Self> {
        if !(alpha0 >= 0.0) || !alpha0.is_finite() {
            return Err(invalid(format!("alpha0 = {alpha0} must be finite and >= 0")));
        }
        let mech = Self::unchecked(space, rows, alpha0)?;
        if let Some((x, xp, y)) = mech.certification_violation(alpha0) {
            return Err(Error::NotCertified {
                alpha0,
                detail: format!(
                    "A[{x},{y}] = {} exceeds exp({alpha0} * {}) * A[{xp},{y}] = {}",
                    mech.prob(x, y),
                    mech.space.dist(x, xp),
                    mech.prob(xp, y)
                ),
            });
        }
        Ok(mech)
    }

    /// Builds the channel at the smallest level it satisfies.
    pub fn with_certified_level(space: Arc<MetricSpace>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut mech = Self::unchecked(space, rows, 0.0)?;
        let level = mech.certified_level();
        if !level.is_finite() {
            return Err(Error::NotCertified {
                alpha0: level,
                detail: "no finite level certifies this channel".into(),
            });
        }
        mech.alpha0 = level;
        Ok(mech)
    }

    fn unchecked(space: Arc<MetricSpace>, rows: Vec<Vec<f64>>, alpha0: f64) -> Result<Self> {
        let k = space.len();
        if rows.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: rows.len(),
            });
        }
        let out_size = rows[0].len();
        if out_size == 0 {
            return Err(invalid("output alphabet is empty"));
        }
        let mut probs = Vec::with_capacity(k * out_size);
        let mut cumulative = Vec::with_capacity(k * out_size);
        for (x, row) in rows.iter().enumerate() {
            if row.len() != out_size {
                return Err(Error::DimensionMismatch {
                    expected: out_size,
                    got: row.len(),
                });
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(invalid(format!("row {x} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(invalid(format!("row {x} sums to {sum}, not 1")));
            }
            let mut acc = 0.0;
            for &p in row {
                probs.push(p);
                acc += p;
                cumulative.push(acc);
            }
        }
        Ok(Self {
            space,
            out_size,
            probs,
            cumulative,
            alpha0,
        })
    }

    fn certification_violation(&self, alpha0: f64) -> Option<(usize, usize, usize)> {
        let k = self.space.len();
        for x in 0..k {
            for xp in 0..k {
                if x == xp {
                    continue;
                }
                let factor = (alpha0 * self.space.dist(x, xp)).exp();
                for y in 0..self.out_size {
                    if self.prob(x, y) > factor * self.prob(xp, y) * (1.0 + CERT_TOL) {
                        return Some((x, xp, y));
                    }
                }
            }
        }
        None
    }

    /// `max ln(A[x,y] / A[x',y]) / d(x,x')` over all triples; infinite when
    /// some ratio is unbounded.
    pub fn certified_level(&self) -> f64 {
        let k = self.space.len();
        let mut level = 0.0f64;
        for x in 0..k {
            for xp in 0..k {
                if x == xp {
                    continue;
                }
                let d = self.space.dist(x, xp);
                for y in 0..self.out_size {
                    let (p, q) = (self.prob(x, y), self.prob(xp, y));
                    if p <= q {
                        continue;
                    }
                    if q == 0.0 || d == 0.0 {
                        return f64::INFINITY;
                    }
                    level = level.max((p / q).ln() / d);
                }
            }
        }
        level
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn in_size(&self) -> usize {
        self.space.len()
    }

    pub fn out_size(&self) -> usize {
        self.out_size
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.out_size + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.out_size..(x + 1) * self.out_size]
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.in_size(), self.out_size, &self.probs)
    }

    /// Draws one output for input `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        let cum = &self.cumulative[x * self.out_size..(x + 1) * self.out_size];
        let u: f64 = rng.random::<f64>() * cum[self.out_size - 1];
        cum.partition_point(|&c| c <= u).min(self.out_size - 1)
    }
}
