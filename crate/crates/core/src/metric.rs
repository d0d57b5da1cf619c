//! Finite metric spaces with distances normalized to `[0, 1]`.
//!
//! Points are 0-based indices. Distances are stored as a dense row-major
//! table since every mechanism queries arbitrary pairs.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Absolute tolerance for the metric axioms.
pub const METRIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpace {
    k: usize,
    dist: Vec<f64>,
    /// Factor the raw distances were divided by (1 when given pre-normalized).
    scale: f64,
    clustered: Option<ClusteredSpace>,
}

impl MetricSpace {
    /// Builds a space from a full distance table, checking all four axioms.
    pub fn from_table(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidMetric("empty point set".into()));
        }
        let mut dist = Vec::with_capacity(k * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidMetric(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            dist.extend(row);
        }
        let space = Self {
            k,
            dist,
            scale: 1.0,
            clustered: None,
        };
        space.check_invariants()?;
        Ok(space)
    }

    /// Discrete metric: every pair of distinct points is at distance 1.
    pub fn discrete(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidMetric("empty point set".into()));
        }
        let mut dist = vec![1.0; k * k];
        for i in 0..k {
            dist[i * k + i] = 0.0;
        }
        Ok(Self {
            k,
            dist,
            scale: 1.0,
            clustered: None,
        })
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.k + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.dist[x * self.k..(x + 1) * self.k]
    }

    /// Normalization factor applied to the raw distances.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Cluster structure, when the space was built by [`build_clustered`].
    pub fn clustered(&self) -> Option<&ClusteredSpace> {
        self.clustered.as_ref()
    }

    /// Checks zero diagonal, symmetry, triangle inequality and `d <= 1`.
    pub fn check_invariants(&self) -> Result<()> {
        let k = self.k;
        for x in 0..k {
            if self.dist(x, x).abs() > METRIC_TOL {
                return Err(Error::InvalidMetric(format!("d({x},{x}) != 0")));
            }
            for y in 0..k {
                let d = self.dist(x, y);
                if !d.is_finite() || !(-METRIC_TOL..=1.0 + METRIC_TOL).contains(&d) {
                    return Err(Error::InvalidMetric(format!("d({x},{y}) = {d} outside [0, 1]")));
                }
                if (d - self.dist(y, x)).abs() > METRIC_TOL {
                    return Err(Error::InvalidMetric(format!("symmetry at ({x},{y})")));
                }
            }
        }
        for x in 0..k {
            for z in 0..k {
                let dxz = self.dist(x, z);
                for y in 0..k {
                    if self.dist(x, y) > dxz + self.dist(z, y) + METRIC_TOL {
                        return Err(Error::InvalidMetric(format!("triangle inequality at ({x},{z},{y})")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Serializes to the text format. Clustered spaces use the compact form.
    pub fn to_text(&self) -> String {
        if let Some(c) = &self.clustered {
            return format!("{c}\n");
        }
        let mut out = format!("metric k={}\n", self.k);
        for x in 0..self.k {
            let line: Vec<String> = self.row(x).iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty metric file".into()))?;
        if header.starts_with("clustered") {
            let c: ClusteredSpace = header.parse()?;
            return c.metric();
        }
        let k: usize = header
            .strip_prefix("metric k=")
            .ok_or_else(|| Error::Parse(format!("unrecognized header `{header}`")))?
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad point count: {e}")))?;
        let mut rows = Vec::with_capacity(k);
        for line in lines.by_ref().take(k) {
            let row = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() != k {
            return Err(Error::Parse(format!("expected {k} rows, found {}", rows.len())));
        }
        Self::from_table(rows)
    }
}

/// The `s` clusters of `t` points each; distance `r` inside a cluster and 1
/// across clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusteredSpace {
    pub s: usize,
    pub t: usize,
    pub r: f64,
}

impl ClusteredSpace {
    pub fn new(s: usize, t: usize, r: f64) -> Result<Self> {
        if s == 0 || t == 0 {
            return Err(Error::InvalidParameter(format!("cluster shape {s}x{t} is empty")));
        }
        if !(r > 0.0 && r < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "intra-cluster distance {r} not in (0, 1/2)"
            )));
        }
        Ok(Self { s, t, r })
    }

    pub fn len(&self) -> usize {
        self.s * self.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of point `(cluster, element)` in cluster-major order.
    #[inline]
    pub fn point(&self, cluster: usize, element: usize) -> usize {
        cluster * self.t + element
    }

    #[inline]
    pub fn cluster_of(&self, x: usize) -> usize {
        x / self.t
    }

    #[inline]
    pub fn dist(&self, x: usize, y: usize) -> f64 {
        if x == y {
            0.0
        } else if self.cluster_of(x) == self.cluster_of(y) {
            self.r
        } else {
            1.0
        }
    }

    pub fn metric(&self) -> Result<MetricSpace> {
        let k = self.len();
        let mut dist = Vec::with_capacity(k * k);
        for x in 0..k {
            for y in 0..k {
                dist.push(self.dist(x, y));
            }
        }
        Ok(MetricSpace {
            k,
            dist,
            scale: 1.0,
            clustered: Some(*self),
        })
    }
}

impl fmt::Display for ClusteredSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "clustered s={} t={} r={}", self.s, self.t, self.r)
    }
}

impl FromStr for ClusteredSpace {
    type Err = Error;

    /// Accepts `clustered s=<s> t=<t> r=<r>` and the short `clustered:s,t,r`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let bad = || Error::Parse(format!("bad clustered space `{text}`"));
        if let Some(rest) = text.strip_prefix("clustered:") {
            let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(bad());
            }
            return ClusteredSpace::new(
                parts[0].parse().map_err(|_| bad())?,
                parts[1].parse().map_err(|_| bad())?,
                parts[2].parse().map_err(|_| bad())?,
            );
        }
        let rest = text.strip_prefix("clustered").ok_or_else(bad)?;
        let (mut s, mut t, mut r) = (None, None, None);
        for field in rest.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(bad)?;
            match key {
                "s" => s = Some(value.parse().map_err(|_| bad())?),
                "t" => t = Some(value.parse().map_err(|_| bad())?),
                "r" => r = Some(value.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        ClusteredSpace::new(s.ok_or_else(bad)?, t.ok_or_else(bad)?, r.ok_or_else(bad)?)
    }
}

/// Builds the clustered metric space of `s` clusters with `t` points each.
pub fn build_clustered(s: usize, t: usize, r: f64) -> Result<MetricSpace> {
    ClusteredSpace::new(s, t, r)?.metric()
}

/// Per-point embedding vectors of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "embedding needs at least one non-empty vector".into(),
            ));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("embedding has non-finite entries".into()));
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, x: usize) -> &[f64] {
        &self.vectors[x]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distances between embedding vectors, divided by the largest
/// pairwise distance. The divisor is available as [`MetricSpace::scale`].
pub fn build_embedding(table: &EmbeddingTable) -> Result<MetricSpace> {
    let k = table.len();
    let mut raw = vec![0.0; k * k];
    let mut max = 0.0f64;
    for x in 0..k {
        for y in (x + 1)..k {
            let d = euclidean(table.vector(x), table.vector(y));
            raw[x * k + y] = d;
            raw[y * k + x] = d;
            max = max.max(d);
        }
    }
    if max <= 0.0 {
        return Err(Error::InvalidParameter("embedding vectors are all identical".into()));
    }
    let dist = raw.into_iter().map(|d| d / max).collect();
    Ok(MetricSpace {
        k,
        dist,
        scale: max,
        clustered: None,
    })
}
