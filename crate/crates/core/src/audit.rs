//! Brute-force privacy checks on tiny domains via the hockey-stick
//! divergence `D_{e^eps}(P || Q) = sum_y max(P(y) - e^eps Q(y), 0)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::mechanism::TransitionMechanism;
use crate::metric::MetricSpace;
use crate::transport::{emd_cost, Histogram, Multiset};

/// Slack on every divergence comparison.
pub const AUDIT_TOL: f64 = 1e-12;
/// Largest enumeration `|Y|^m` the exact routines accept.
pub const TRACTABLE: f64 = 1e6;

/// A distribution over output multisets, keyed by output count vectors.
pub type OutputLaw = BTreeMap<Vec<u64>, f64>;

pub fn hockey_stick(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    if !(eps >= 0.0) {
        return Err(invalid(format!("eps = {eps} must be >= 0")));
    }
    let factor = eps.exp();
    Ok(p.iter().zip(q).map(|(&a, &b)| (a - factor * b).max(0.0)).sum())
}

/// Hockey-stick divergence between two laws on the union of their supports.
pub fn hockey_stick_laws(p: &OutputLaw, q: &OutputLaw, eps: f64) -> f64 {
    let factor = eps.exp();
    p.iter()
        .map(|(key, &a)| (a - factor * q.get(key).copied().unwrap_or(0.0)).max(0.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemAuditReport {
    pub passed: bool,
    /// Ordered pair `(x, x')` with the largest excess over `delta`.
    pub worst_pair: (usize, usize),
    /// Divergence at that pair.
    pub divergence: f64,
    /// `divergence - delta`; positive means a violation.
    pub excess: f64,
    /// `min alpha d(x,x') - ln(A[x,y] / A[x',y])` over all triples with
    /// positive mass; 0 when some ratio constraint is tight.
    pub ratio_slack: f64,
}

/// Checks `(alpha, delta)`-local metric DP of a channel over all ordered
/// input pairs.
pub fn verify_item_metric_dp(a: &TransitionMechanism, alpha: f64, delta: f64) -> Result<ItemAuditReport> {
    let k = a.in_size();
    let space = a.space();
    let mut worst = ((0, 0), f64::NEG_INFINITY, 0.0);
    let mut ratio_slack = f64::INFINITY;
    for x in 0..k {
        for xp in 0..k {
            if x == xp {
                continue;
            }
            let d = space.dist(x, xp);
            let div = hockey_stick(a.row(x), a.row(xp), alpha * d)?;
            if div - delta > worst.1 {
                worst = ((x, xp), div - delta, div);
            }
            for y in 0..a.out_size() {
                let (p, q) = (a.prob(x, y), a.prob(xp, y));
                if p > 0.0 {
                    let gap = if q > 0.0 {
                        alpha * d - (p / q).ln()
                    } else {
                        f64::NEG_INFINITY
                    };
                    ratio_slack = ratio_slack.min(gap);
                }
            }
        }
    }
    if k < 2 {
        worst = ((0, 0), -delta, 0.0);
        ratio_slack = 0.0;
    }
    Ok(ItemAuditReport {
        passed: worst.1 <= AUDIT_TOL,
        worst_pair: worst.0,
        divergence: worst.2,
        excess: worst.1,
        ratio_slack,
    })
}

fn check_tractable(out: usize, m: u64) -> Result<()> {
    let size = (out as f64).powf(m as f64);
    if size > TRACTABLE {
        return Err(Error::Intractable(size, TRACTABLE));
    }
    Ok(())
}

/// Exact law of the unordered output of the item-wise release of `k`.
///
/// Items are folded in one at a time, merging ordered tuples that share a
/// count vector as they arise.
pub fn exact_itemwise_distribution(k: &Multiset, a: &TransitionMechanism) -> Result<OutputLaw> {
    if k.counts().len() != a.in_size() {
        return Err(Error::DimensionMismatch {
            expected: a.in_size(),
            got: k.counts().len(),
        });
    }
    check_tractable(a.out_size(), k.size())?;
    let mut law: OutputLaw = BTreeMap::new();
    law.insert(vec![0; a.out_size()], 1.0);
    for x in k.items() {
        let mut next: OutputLaw = BTreeMap::new();
        for (key, p) in &law {
            for (y, &py) in a.row(x).iter().enumerate() {
                if py == 0.0 {
                    continue;
                }
                let mut key = key.clone();
                key[y] += 1;
                *next.entry(key).or_insert(0.0) += p * py;
            }
        }
        law = next;
    }
    Ok(law)
}

/// Law of the count vector of `s` i.i.d. draws from `h`.
pub fn exact_sample_distribution(h: &Histogram, s: u64) -> Result<OutputLaw> {
    check_tractable(h.len(), s)?;
    let mut law: OutputLaw = BTreeMap::new();
    law.insert(vec![0; h.len()], 1.0);
    for _ in 0..s {
        let mut next: OutputLaw = BTreeMap::new();
        for (key, p) in &law {
            for (x, &px) in h.mass().iter().enumerate() {
                if px == 0.0 {
                    continue;
                }
                let mut key = key.clone();
                key[x] += 1;
                *next.entry(key).or_insert(0.0) += p * px;
            }
        }
        law = next;
    }
    Ok(law)
}

/// All count vectors over `k` points summing to `m`.
pub fn multisets_of_size(k: usize, m: u64) -> Vec<Vec<u64>> {
    fn rec(k: usize, left: u64, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if prefix.len() == k - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in (0..=left).rev() {
            prefix.push(c);
            rec(k, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, m, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmdAuditReport {
    pub passed: bool,
    /// Count vectors of the pair with the largest excess.
    pub worst_pair: (Vec<u64>, Vec<u64>),
    pub divergence: f64,
    pub excess: f64,
    pub pairs_checked: usize,
}

/// Checks bounded `(alpha, delta)` EMD-DP of the item-wise release over all
/// pairs of size-`m` datasets, in both directions.
pub fn verify_emd_dp(a: &TransitionMechanism, m: u64, alpha: f64, delta: f64) -> Result<EmdAuditReport> {
    if m == 0 {
        return Err(invalid("m must be >= 1"));
    }
    check_tractable(a.out_size(), m)?;
    let space: Arc<MetricSpace> = a.space().clone();
    let sets = multisets_of_size(a.in_size(), m);
    let mut laws = Vec::with_capacity(sets.len());
    let mut hists = Vec::with_capacity(sets.len());
    for counts in &sets {
        let ms = Multiset::new(space.clone(), counts.clone())?;
        laws.push(exact_itemwise_distribution(&ms, a)?);
        hists.push(ms.normalize()?);
    }
    let mut worst = (0, 0, f64::NEG_INFINITY, 0.0);
    let mut pairs = 0;
    for i in 0..sets.len() {
        for j in 0..sets.len() {
            if i == j {
                continue;
            }
            let d = emd_cost(&hists[i], &hists[j])?;
            let div = hockey_stick_laws(&laws[i], &laws[j], alpha * d);
            pairs += 1;
            if div - delta > worst.2 {
                worst = (i, j, div - delta, div);
            }
        }
    }
    if pairs == 0 {
        return Ok(EmdAuditReport {
            passed: true,
            worst_pair: (sets[0].clone(), sets[0].clone()),
            divergence: 0.0,
            excess: -delta,
            pairs_checked: 0,
        });
    }
    Ok(EmdAuditReport {
        passed: worst.2 <= AUDIT_TOL,
        worst_pair: (sets[worst.0].clone(), sets[worst.1].clone()),
        divergence: worst.3,
        excess: worst.2,
        pairs_checked: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frequency::gkrr_mechanism;
    use crate::metric::ClusteredSpace;
    use proptest::prelude::*;

    #[test]
    fn hockey_stick_examples() {
        assert_eq!(hockey_stick(&[0.3, 0.7], &[0.3, 0.7], 0.5).unwrap(), 0.0);
        assert!((hockey_stick(&[0.8, 0.2], &[0.2, 0.8], 0.0).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(hockey_stick(&[0.8, 0.2], &[0.2, 0.8], 50.0).unwrap(), 0.0);
        assert!(hockey_stick(&[1.0], &[0.5, 0.5], 0.0).is_err());
    }

    #[test]
    fn gkrr_item_audit() {
        let cs = ClusteredSpace::new(2, 3, 0.3).unwrap();
        let a = gkrr_mechanism(cs, 1.5).unwrap();
        let ok = verify_item_metric_dp(&a, 1.5, 0.0).unwrap();
        assert!(ok.passed && ok.excess <= 1e-12 && ok.ratio_slack.abs() <= 1e-12);
        let bad = verify_item_metric_dp(&a, 1.35, 0.0).unwrap();
        assert!(!bad.passed && bad.excess > 0.0);
        let uniform = gkrr_mechanism(cs, 0.0).unwrap();
        assert!(verify_item_metric_dp(&uniform, 0.0, 0.0).unwrap().passed);
    }

    #[test]
    fn itemwise_law_small_cases() {
        let cs = ClusteredSpace::new(1, 3, 0.3).unwrap();
        let a = gkrr_mechanism(cs, 1.0).unwrap();
        let space = a.space().clone();
        let one = exact_itemwise_distribution(&Multiset::from_items(space.clone(), &[1]).unwrap(), &a).unwrap();
        for y in 0..3 {
            let mut key = vec![0; 3];
            key[y] = 1;
            assert!((one[&key] - a.prob(1, y)).abs() < 1e-15);
        }
        let two = exact_itemwise_distribution(&Multiset::from_items(space, &[0, 0]).unwrap(), &a).unwrap();
        assert!((two[&vec![2, 0, 0]] - a.prob(0, 0).powi(2)).abs() < 1e-15);
        assert!((two[&vec![1, 1, 0]] - 2.0 * a.prob(0, 0) * a.prob(0, 1)).abs() < 1e-15);
        assert!((two.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tractability_limit() {
        let cs = ClusteredSpace::new(2, 5, 0.3).unwrap();
        let a = gkrr_mechanism(cs, 1.0).unwrap();
        let k = Multiset::from_items(a.space().clone(), &[0; 7]).unwrap();
        assert!(matches!(
            exact_itemwise_distribution(&k, &a),
            Err(Error::Intractable(..))
        ));
    }

    #[test]
    fn single_item_matches_channel_audit() {
        let cs = ClusteredSpace::new(2, 2, 0.25).unwrap();
        let a = gkrr_mechanism(cs, 2.0).unwrap();
        for alpha in [1.0, 2.0] {
            let item = verify_item_metric_dp(&a, alpha, 0.0).unwrap();
            let emd = verify_emd_dp(&a, 1, alpha, 0.0).unwrap();
            assert_eq!(item.passed, emd.passed);
            assert!((item.divergence - emd.divergence).abs() < 1e-12);
        }
    }

    #[test]
    fn halved_level_fails_with_witness() {
        let cs = ClusteredSpace::new(2, 1, 0.3).unwrap();
        let a = gkrr_mechanism(cs, 1.0).unwrap();
        // Plain composition over two items gives level 2 * alpha0 per unit EMD.
        assert!(verify_emd_dp(&a, 2, 2.0, 0.0).unwrap().passed);
        let r = verify_emd_dp(&a, 2, 1.0, 0.0).unwrap();
        assert!(!r.passed);
        assert_ne!(r.worst_pair.0, r.worst_pair.1);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(multisets_of_size(2, 3).len(), 4);
        assert_eq!(multisets_of_size(3, 2).len(), 6);
        assert!(multisets_of_size(3, 4).iter().all(|v| v.iter().sum::<u64>() == 4));
    }

    proptest! {
        #[test]
        fn divergence_nonincreasing(p in prop::collection::vec(0.01f64..1.0, 4), q in prop::collection::vec(0.01f64..1.0, 4)) {
            let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
            let p: Vec<f64> = p.iter().map(|v| v / sp).collect();
            let q: Vec<f64> = q.iter().map(|v| v / sq).collect();
            let tv = 0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            prop_assert!((hockey_stick(&p, &q, 0.0).unwrap() - tv).abs() < 1e-12);
            let mut prev = f64::INFINITY;
            for i in 0..20 {
                let v = hockey_stick(&p, &q, i as f64 * 0.1).unwrap();
                prop_assert!(v <= prev);
                prev = v;
            }
        }

        #[test]
        fn law_is_order_invariant(items in prop::collection::vec(0usize..3, 1..5)) {
            let cs = ClusteredSpace::new(1, 3, 0.3).unwrap();
            let a = gkrr_mechanism(cs, 0.8).unwrap();
            let space = a.space().clone();
            let mut rev = items.clone();
            rev.reverse();
            let l1 = exact_itemwise_distribution(&Multiset::from_items(space.clone(), &items).unwrap(), &a).unwrap();
            let l2 = exact_itemwise_distribution(&Multiset::from_items(space, &rev).unwrap(), &a).unwrap();
            prop_assert!((l1.values().sum::<f64>() - 1.0).abs() < 1e-12);
            for (k, v) in &l1 {
                prop_assert!((v - l2[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn pass_is_monotone(a0 in 0.1f64..2.0, alpha in 0.0f64..4.0, delta in 0.0f64..0.2) {
            let cs = ClusteredSpace::new(2, 1, 0.3).unwrap();
            let a = gkrr_mechanism(cs, a0).unwrap();
            if verify_emd_dp(&a, 2, alpha, delta).unwrap().passed {
                prop_assert!(verify_emd_dp(&a, 2, alpha * 1.5, delta + 0.01).unwrap().passed);
            }
        }
    }
}
