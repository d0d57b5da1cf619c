//! Earth mover's distance between distributions on a finite metric space.

mod assignment;
mod flow;

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::metric::MetricSpace;
use crate::rng;

/// Allowed drift of a histogram's total mass from 1.
pub const MASS_TOL: f64 = 1e-12;
/// Allowed marginal error of a coupling.
pub const COUPLING_TOL: f64 = 1e-9;

fn same_space(a: &Arc<MetricSpace>, b: &Arc<MetricSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

/// A probability vector over the points of a metric space.
#[derive(Debug, Clone)]
pub struct Histogram {
    space: Arc<MetricSpace>,
    mass: Vec<f64>,
}

impl Histogram {
    pub fn new(space: Arc<MetricSpace>, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: mass.len(),
            });
        }
        if let Some(bad) = mass.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidHistogram(format!(
                "entry {bad} is negative or not finite"
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidHistogram(format!("total mass {total} != 1")));
        }
        Ok(Self { space, mass })
    }

    /// Clamps negative entries to zero and rescales to total mass 1.
    ///
    /// An all-nonpositive vector maps to the uniform distribution.
    pub fn project_to_simplex(space: Arc<MetricSpace>, raw: &[f64]) -> Result<Self> {
        if raw.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: raw.len(),
            });
        }
        let clamped: Vec<f64> = raw.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect();
        let total: f64 = clamped.iter().sum();
        let mass = if total > 0.0 && total.is_finite() {
            clamped.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        Ok(Self { space, mass })
    }

    /// Point mass at `x`.
    pub fn point(space: Arc<MetricSpace>, x: usize) -> Result<Self> {
        if x >= space.len() {
            return Err(Error::InvalidParameter(format!(
                "point {x} outside space of size {}",
                space.len()
            )));
        }
        let mut mass = vec![0.0; space.len()];
        mass[x] = 1.0;
        Ok(Self { space, mass })
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// Item counts per point; a user's dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiset {
    space: Arc<MetricSpace>,
    counts: Vec<u64>,
}

impl Multiset {
    pub fn new(space: Arc<MetricSpace>, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != space.len() {
            return Err(Error::DimensionMismatch {
                expected: space.len(),
                got: counts.len(),
            });
        }
        Ok(Self { space, counts })
    }

    pub fn from_items(space: Arc<MetricSpace>, items: &[usize]) -> Result<Self> {
        let mut counts = vec![0u64; space.len()];
        for &x in items {
            *counts.get_mut(x).ok_or_else(|| {
                Error::InvalidParameter(format!("point {x} outside space of size {}", space.len()))
            })? += 1;
        }
        Ok(Self { space, counts })
    }

    pub fn space(&self) -> &Arc<MetricSpace> {
        &self.space
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of items `m`.
    pub fn size(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.size() == 0
    }

    /// Items in ascending point order, with repetition.
    pub fn items(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(x, &c)| std::iter::repeat_n(x, c as usize))
            .collect()
    }

    /// The empirical distribution `counts / m`.
    pub fn normalize(&self) -> Result<Histogram> {
        let m = self.size();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        let mass = self.counts.iter().map(|&c| c as f64 / m as f64).collect();
        Ok(Histogram {
            space: self.space.clone(),
            mass,
        })
    }

    /// Pools several datasets into one.
    pub fn pooled(datasets: &[Multiset]) -> Result<Multiset> {
        let first = datasets.first().ok_or(Error::EmptyDataset)?;
        let mut counts = vec![0u64; first.space.len()];
        for d in datasets {
            if !same_space(&first.space, &d.space) {
                return Err(Error::SpaceMismatch);
            }
            for (c, v) in counts.iter_mut().zip(&d.counts) {
                *c += v;
            }
        }
        Ok(Multiset {
            space: first.space.clone(),
            counts,
        })
    }
}

/// A joint mass table whose marginals are two histograms.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    k: usize,
    joint: Vec<f64>,
}

impl Coupling {
    pub fn from_joint(k: usize, joint: Vec<f64>) -> Result<Self> {
        if joint.len() != k * k {
            return Err(Error::DimensionMismatch {
                expected: k * k,
                got: joint.len(),
            });
        }
        if joint.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("coupling has negative mass".into()));
        }
        Ok(Self { k, joint })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.joint[x * self.k + y]
    }

    pub fn joint(&self) -> &[f64] {
        &self.joint
    }

    pub fn first_marginal(&self) -> Vec<f64> {
        (0..self.k).map(|x| (0..self.k).map(|y| self.get(x, y)).sum()).collect()
    }

    pub fn second_marginal(&self) -> Vec<f64> {
        (0..self.k).map(|y| (0..self.k).map(|x| self.get(x, y)).sum()).collect()
    }

    /// Expected distance under the coupling.
    pub fn cost(&self, space: &MetricSpace) -> f64 {
        let mut total = 0.0;
        for x in 0..self.k {
            for y in 0..self.k {
                total += self.get(x, y) * space.dist(x, y);
            }
        }
        total
    }

    /// Checks both marginals against `p` and `q` within [`COUPLING_TOL`].
    pub fn is_coupling_of(&self, p: &[f64], q: &[f64]) -> bool {
        let close = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).all(|(u, v)| (u - v).abs() <= COUPLING_TOL);
        p.len() == self.k && q.len() == self.k && close(self.first_marginal(), p) && close(self.second_marginal(), q)
    }
}

/// Exact earth mover's distance and an optimal coupling.
///
/// The solver runs on masses adjusted so both totals agree exactly; the
/// residual (at most [`MASS_TOL`]) is absorbed into `q`'s largest bin.
pub fn emd(p: &Histogram, q: &Histogram) -> Result<(f64, Coupling)> {
    if !same_space(&p.space, &q.space) {
        return Err(Error::SpaceMismatch);
    }
    let space = &p.space;
    let k = space.len();
    let supply = p.mass.clone();
    let mut demand = q.mass.clone();
    let gap = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    if gap != 0.0 {
        let largest = (0..k).max_by(|&a, &b| demand[a].total_cmp(&demand[b])).unwrap_or(0);
        demand[largest] = (demand[largest] + gap).max(0.0);
    }
    let joint = flow::min_cost_transport(&supply, &demand, |x, y| space.dist(x, y));
    let plan = Coupling { k, joint };
    let cost = plan.cost(space).clamp(0.0, 1.0);
    Ok((cost, plan))
}

/// Earth mover's distance only.
pub fn emd_cost(p: &Histogram, q: &Histogram) -> Result<f64> {
    emd(p, q).map(|(c, _)| c)
}

/// An optimal item-to-item matching between two equal-size multisets.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// Items of the first multiset, ascending.
    pub left: Vec<usize>,
    /// Items of the second multiset, ascending.
    pub right: Vec<usize>,
    /// `left[i]` is matched to `right[permutation[i]]`.
    pub permutation: Vec<usize>,
    /// Mean matched distance.
    pub cost: f64,
}

/// Birkhoff-von Neumann matching: the permutation minimizing the mean
/// distance between paired items, found with the Hungarian method.
pub fn bvn_matching(a: &Multiset, b: &Multiset) -> Result<Matching> {
    if !same_space(&a.space, &b.space) {
        return Err(Error::SpaceMismatch);
    }
    let (ma, mb) = (a.size(), b.size());
    if ma != mb {
        return Err(Error::UnequalSizes(ma as usize, mb as usize));
    }
    if ma == 0 {
        return Err(Error::EmptyDataset);
    }
    let left = a.items();
    let right = b.items();
    let m = left.len();
    let mut cost = Vec::with_capacity(m * m);
    for &x in &left {
        for &y in &right {
            cost.push(a.space.dist(x, y));
        }
    }
    let permutation = assignment::hungarian(m, &cost);
    let total: f64 = permutation.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(Matching {
        left,
        right,
        permutation,
        cost: total / m as f64,
    })
}

/// Draws `count` i.i.d. point pairs with probability proportional to the
/// coupling's joint mass.
pub fn sample_coupling(plan: &Coupling, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let index = WeightedIndex::new(plan.joint.iter().copied())
        .map_err(|e| Error::InvalidParameter(format!("coupling cannot be sampled: {e}")))?;
    let mut rng = rng::stream(seed);
    let k = plan.k;
    Ok((0..count)
        .map(|_| {
            let cell = index.sample(&mut rng);
            (cell / k, cell % k)
        })
        .collect())
}
