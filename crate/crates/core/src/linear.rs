//! Linear queries `q_f(K) = E_{x~K}[f(x)]` and their private release.
//!
//! A query is stored as the `d x k` matrix `F` whose column `x` is `f(x)`,
//! so `q_f(K) = F * K`. Its EMD sensitivity is at most the Lipschitz
//! constant of `f` with respect to the underlying metric.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Normal, StandardNormal};

use crate::budget::Model;
use crate::error::{invalid, Error, Result};
use crate::metric::{EmbeddingTable, MetricSpace};
use crate::norms::spectral_norm;
use crate::rng::{self, StreamRng};
use crate::transport::{Histogram, Multiset};

/// Which norm the Gamma-ball noise is shaped in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseNorm {
    #[default]
    L2,
    /// Multidimensional Laplace.
    L1,
}

impl NoiseNorm {
    fn of(self, v: impl Iterator<Item = f64>) -> f64 {
        match self {
            NoiseNorm::L2 => v.map(|x| x * x).sum::<f64>().sqrt(),
            NoiseNorm::L1 => v.map(f64::abs).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearQuery {
    space: Arc<MetricSpace>,
    matrix: DMatrix<f64>,
}

impl LinearQuery {
    pub fn new(space: Arc<MetricSpace>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(invalid("query must have at least one output dimension"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(invalid("query has non-finite entries"));
        }
        Ok(Self { space, matrix })
    }

    /// From `d` rows of `k` values each.
    pub fn from_rows(space: Arc<MetricSpace>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: bad.len(),
            });
        }
        Self::new(space, DMatrix::from_fn(d, k, |i, j| rows[i][j]))
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `F * h`.
    pub fn evaluate(&self, h: &Histogram) -> Result<Vec<f64>> {
        if h.len() != self.space.len() || **h.space() != *self.space {
            return Err(Error::SpaceMismatch);
        }
        let v = &self.matrix * DVector::from_column_slice(h.mass());
        Ok(v.iter().copied().collect())
    }

    pub fn evaluate_multiset(&self, k: &Multiset) -> Result<Vec<f64>> {
        self.evaluate(&k.normalize()?)
    }
}

/// `max_{x != x'} ||f(x) - f(x')||_2 / d(x, x')`.
pub fn lipschitz_constant(q: &LinearQuery) -> Result<f64> {
    lipschitz_constant_in(q, NoiseNorm::L2)
}

pub fn lipschitz_constant_in(q: &LinearQuery, norm: NoiseNorm) -> Result<f64> {
    let k = q.space.len();
    let mut best = 0.0f64;
    let mut any_positive = false;
    for x in 0..k {
        for y in (x + 1)..k {
            let diff = norm.of(q
                .matrix
                .column(x)
                .iter()
                .zip(q.matrix.column(y).iter())
                .map(|(a, b)| a - b));
            let d = q.space.dist(x, y);
            if d > 0.0 {
                any_positive = true;
                best = best.max(diff / d);
            } else if diff > 1e-12 {
                return Err(Error::UnboundedLipschitz(x, y));
            }
        }
    }
    if !any_positive {
        return Err(invalid("lipschitz constant needs two points at positive distance"));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// `g * U` with `g ~ Gamma(d, lipschitz * omega)` and `U` uniform on the
    /// unit sphere of the chosen norm.
    GammaBall(NoiseNorm),
    /// Independent Gaussian per coordinate.
    Gaussian { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Scale parameter; `1 / alpha` for a local release.
    pub omega: f64,
    /// Upper bound on the query's Lipschitz constant.
    pub lipschitz: f64,
    /// Skip validating `lipschitz` against the exact constant.
    pub unchecked: bool,
}

impl NoiseSpec {
    pub fn gamma_ball(alpha: f64, lipschitz: f64) -> Result<Self> {
        Self::for_alpha(NoiseKind::GammaBall(NoiseNorm::L2), alpha, lipschitz)
    }

    pub fn gaussian(alpha: f64, delta: f64, lipschitz: f64) -> Result<Self> {
        Self::for_alpha(NoiseKind::Gaussian { delta }, alpha, lipschitz)
    }

    pub fn for_alpha(kind: NoiseKind, alpha: f64, lipschitz: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid(format!("alpha = {alpha} must be > 0")));
        }
        Ok(Self {
            kind,
            omega: 1.0 / alpha,
            lipschitz,
            unchecked: false,
        })
    }

    pub fn unchecked(mut self) -> Self {
        self.unchecked = true;
        self
    }

    /// Scale after accounting for the model: `omega / n` in the central model.
    pub fn effective_omega(&self, model: Model) -> f64 {
        match model {
            Model::Local => self.omega,
            Model::Central { n } => self.omega / n as f64,
        }
    }
}

/// Per-coordinate standard deviation of the Gaussian variant.
pub fn gaussian_std(lipschitz: f64, omega: f64, delta: f64) -> f64 {
    lipschitz * omega * (1.25 * (1.0 / delta).ln()).sqrt()
}

/// A point uniform on the unit sphere of `norm` in `R^d`, scaled by a
/// `Gamma(d, scale)` radius.
pub fn gamma_ball_noise(rng: &mut StreamRng, d: usize, scale: f64, norm: NoiseNorm) -> Result<Vec<f64>> {
    let radius = Gamma::new(d as f64, scale)
        .map_err(|e| invalid(format!("gamma parameters: {e}")))?
        .sample(rng);
    let dir: Vec<f64> = match norm {
        NoiseNorm::L2 => loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = NoiseNorm::L2.of(v.iter().copied());
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        },
        NoiseNorm::L1 => loop {
            // Normalized exponentials are uniform on the simplex; random
            // signs spread them over the L1 sphere.
            let v: Vec<f64> = (0..d)
                .map(|_| {
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        e
                    } else {
                        -e
                    }
                })
                .collect();
            let n = NoiseNorm::L1.of(v.iter().copied());
            if n > 0.0 {
                break v.into_iter().map(|x| x / n).collect();
            }
        },
    };
    Ok(dir.into_iter().map(|u| radius * u).collect())
}

/// Releases `q_f(K)` with noise calibrated to the query's Lipschitz bound.
///
/// In the central model `k` is the pooled dataset of all `n` users.
pub fn priv_emd_linear(q: &LinearQuery, k: &Multiset, noise: &NoiseSpec, model: Model, seed: u64) -> Result<Vec<f64>> {
    if !(noise.omega > 0.0) || !noise.omega.is_finite() {
        return Err(invalid(format!("scale omega = {} must be > 0", noise.omega)));
    }
    if !(noise.lipschitz >= 0.0) {
        return Err(invalid(format!("lipschitz bound {} must be >= 0", noise.lipschitz)));
    }
    if let Model::Central { n } = model {
        if n == 0 {
            return Err(invalid("central model needs n >= 1"));
        }
    }
    if !noise.unchecked {
        let norm = match noise.kind {
            NoiseKind::GammaBall(norm) => norm,
            NoiseKind::Gaussian { .. } => NoiseNorm::L2,
        };
        let actual = lipschitz_constant_in(q, norm)?;
        if noise.lipschitz < actual * (1.0 - 1e-12) {
            return Err(Error::LipschitzTooSmall {
                supplied: noise.lipschitz,
                actual,
            });
        }
    }
    let value = q.evaluate_multiset(k)?;
    let omega = noise.effective_omega(model);
    let mut rng = rng::stream(seed);
    let d = q.dim();
    let perturbation = match noise.kind {
        NoiseKind::GammaBall(norm) => gamma_ball_noise(&mut rng, d, noise.lipschitz * omega, norm)?,
        NoiseKind::Gaussian { delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(invalid(format!("gaussian noise needs delta in (0, 1), got {delta}")));
            }
            let std = gaussian_std(noise.lipschitz, omega, delta);
            let normal = Normal::new(0.0, std).map_err(|e| invalid(format!("gaussian: {e}")))?;
            (0..d).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    Ok(value.iter().zip(perturbation).map(|(v, z)| v + z).collect())
}

/// A linear query `F * phi(x)` over an embedding, with `||F_i||_2 <= 1`.
#[derive(Debug, Clone)]
pub struct EmbeddingQuery {
    f: DMatrix<f64>,
    embedding: EmbeddingTable,
}

impl EmbeddingQuery {
    pub fn new(rows: &[Vec<f64>], embedding: EmbeddingTable) -> Result<Self> {
        let t = embedding.dim();
        if rows.is_empty() {
            return Err(invalid("query must have at least one row"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::DimensionMismatch {
                    expected: t,
                    got: row.len(),
                });
            }
            let n = NoiseNorm::L2.of(row.iter().copied());
            if n > 1.0 + 1e-12 {
                return Err(invalid(format!("row {i} has norm {n} > 1")));
            }
        }
        let f = DMatrix::from_fn(rows.len(), t, |i, j| rows[i][j]);
        Ok(Self { f, embedding })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// `F * Phi`, the equivalent plain linear query.
    pub fn composite(&self, space: Arc<MetricSpace>) -> Result<LinearQuery> {
        let k = self.embedding.len();
        let phi = DMatrix::from_fn(self.embedding.dim(), k, |i, x| self.embedding.vector(x)[i]);
        LinearQuery::new(space, &self.f * phi)
    }

    /// Lipschitz bound `||F||_2 * scale` with respect to a metric whose
    /// distances are the embedding distances divided by `scale`.
    pub fn lipschitz_bound(&self, space: &MetricSpace) -> f64 {
        spectral_norm(&self.f) * space.scale()
    }

    pub fn evaluate(&self, k: &Multiset) -> Result<Vec<f64>> {
        if k.counts().len() != self.embedding.len() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding.len(),
                got: k.counts().len(),
            });
        }
        let h = k.normalize()?;
        let mut mean = DVector::zeros(self.embedding.dim());
        for (x, &w) in h.mass().iter().enumerate() {
            if w > 0.0 {
                mean += DVector::from_column_slice(self.embedding.vector(x)) * w;
            }
        }
        Ok((&self.f * mean).iter().copied().collect())
    }
}

/// `F * Phi * K` for a row-normalized `F`.
pub fn embedding_query(rows: &[Vec<f64>], embedding: &EmbeddingTable, k: &Multiset) -> Result<Vec<f64>> {
    EmbeddingQuery::new(rows, embedding.clone())?.evaluate(k)
}
