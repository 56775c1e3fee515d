use rand::seq::SliceRandom;

use crate::dataset::{RatingDataset, RatingTriple};
use crate::error::{Error, Result};
use crate::seed;

/// Default popularity cutoffs: the top 500 items, the next 4000, then the tail.
pub const DEFAULT_TIER_CUTOFFS: [u32; 2] = [500, 4500];

/// A popularity ordering of the items, split into tiers.
///
/// Items are renumbered so that remapped id 0 is the most rated item; tier
/// `t` covers remapped ids `[ends[t-1], ends[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct TierPlan {
    /// remapped id -> original dense id
    order: Vec<u32>,
    /// original dense id -> remapped id
    rank: Vec<u32>,
    ends: Vec<u32>,
    coverage: Vec<f64>,
}

/// Sorts items by descending rating count (ties by ascending id) and cuts the
/// ordering at `cutoffs`.
pub fn plan_tiers(ds: &RatingDataset, cutoffs: &[u32]) -> Result<TierPlan> {
    let counts = ds.item_counts();
    let n = counts.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    TierPlan::from_order(order, cutoffs, counts)
}

impl TierPlan {
    fn from_order(order: Vec<u32>, cutoffs: &[u32], counts: &[u32]) -> Result<Self> {
        let n = order.len() as u32;
        if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "tier cutoffs {cutoffs:?} are not strictly increasing"
            )));
        }
        if let Some(&c) = cutoffs.iter().find(|&&c| c > n || c == 0) {
            return Err(Error::InvalidArgument(format!(
                "tier cutoff {c} outside 1..={n}"
            )));
        }
        let mut ends = cutoffs.to_vec();
        if ends.last() != Some(&n) {
            ends.push(n);
        }

        let mut rank = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            rank[old as usize] = new as u32;
        }

        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let mut coverage = Vec::with_capacity(ends.len());
        let mut start = 0usize;
        for &end in &ends {
            let in_tier: u64 = order[start..end as usize]
                .iter()
                .map(|&old| counts[old as usize] as u64)
                .sum();
            coverage.push(if total == 0 {
                0.0
            } else {
                in_tier as f64 / total as f64
            });
            start = end as usize;
        }

        Ok(TierPlan {
            order,
            rank,
            ends,
            coverage,
        })
    }

    /// Keeps items in their original order as a single tier.
    pub fn identity(ds: &RatingDataset) -> Self {
        let n = ds.n_items() as u32;
        Self::from_order((0..n).collect(), &[], ds.item_counts()).expect("no cutoffs")
    }

    /// A random item order as a single tier; the cache-oblivious baseline layout.
    pub fn shuffled(ds: &RatingDataset, seed: u64) -> Self {
        let mut order: Vec<u32> = (0..ds.n_items() as u32).collect();
        order.shuffle(&mut seed::rng(seed, seed::INGEST_SHUFFLE));
        Self::from_order(order, &[], ds.item_counts()).expect("no cutoffs")
    }

    /// Drops cutoffs that do not fit `n_items`, so the defaults work on small data.
    pub fn clamp_cutoffs(cutoffs: &[u32], n_items: usize) -> Vec<u32> {
        cutoffs
            .iter()
            .copied()
            .filter(|&c| c > 0 && (c as usize) < n_items)
            .collect()
    }

    pub fn n_items(&self) -> usize {
        self.order.len()
    }

    pub fn n_tiers(&self) -> usize {
        self.ends.len()
    }

    /// Exclusive end (in remapped ids) of each tier.
    pub fn tier_ends(&self) -> &[u32] {
        &self.ends
    }

    /// Fraction of all ratings that fall in each tier.
    pub fn coverage(&self) -> &[f64] {
        &self.coverage
    }

    /// Remapped position -> original dense item id.
    pub fn order(&self) -> &[u32] {
        &self.order
    }

    pub fn remap(&self, item: u32) -> u32 {
        self.rank[item as usize]
    }

    pub fn original(&self, remapped: u32) -> u32 {
        self.order[remapped as usize]
    }

    pub fn tier_of(&self, remapped: u32) -> usize {
        tier_of(&self.ends, remapped)
    }

    /// Renumbers the items of `ds` according to the plan.
    pub fn apply(&self, ds: &RatingDataset) -> Result<RatingDataset> {
        if ds.n_items() != self.n_items() {
            return Err(Error::InvalidArgument(format!(
                "plan covers {} items, dataset has {}",
                self.n_items(),
                ds.n_items()
            )));
        }
        let triples = ds
            .triples()
            .iter()
            .map(|t| RatingTriple::new(t.user, self.remap(t.item), t.rating))
            .collect();
        let item_ids = self
            .order
            .iter()
            .map(|&old| ds.item_ids()[old as usize])
            .collect();
        RatingDataset::with_ids(triples, ds.range(), ds.user_ids().to_vec(), item_ids)
    }
}

pub(crate) fn tier_of(ends: &[u32], remapped: u32) -> usize {
    ends.partition_point(|&end| end <= remapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RatingRange;
    use proptest::prelude::*;

    fn with_item_counts(counts: &[u32]) -> RatingDataset {
        let mut triples = Vec::new();
        for (item, &c) in counts.iter().enumerate() {
            for u in 0..c {
                triples.push(RatingTriple::new(u, item as u32, 3.0));
            }
        }
        let n_users = counts.iter().copied().max().unwrap_or(0) as usize;
        RatingDataset::from_triples(triples, n_users, counts.len(), RatingRange::default())
            .unwrap()
    }

    #[test]
    fn sorts_by_count_and_reports_coverage() {
        let ds = with_item_counts(&[10, 500, 3]);
        let plan = plan_tiers(&ds, &[1, 2]).unwrap();
        assert_eq!(plan.order(), &[1, 0, 2]);
        assert_eq!(plan.n_tiers(), 3);
        let expected = [500.0 / 513.0, 10.0 / 513.0, 3.0 / 513.0];
        for (c, e) in plan.coverage().iter().zip(expected) {
            assert!((c - e).abs() < 1e-15);
        }
        assert_eq!(plan.tier_of(0), 0);
        assert_eq!(plan.tier_of(1), 1);
        assert_eq!(plan.tier_of(2), 2);
    }

    #[test]
    fn full_cutoff_is_single_tier() {
        let ds = with_item_counts(&[1, 2, 3]);
        let plan = plan_tiers(&ds, &[3]).unwrap();
        assert_eq!(plan.n_tiers(), 1);
        assert_eq!(plan.coverage(), &[1.0]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let ds = with_item_counts(&[2, 5, 2, 5]);
        let plan = plan_tiers(&ds, &[]).unwrap();
        assert_eq!(plan.order(), &[1, 3, 0, 2]);
    }

    #[test]
    fn rejects_bad_cutoffs() {
        let ds = with_item_counts(&[1, 2, 3]);
        assert!(plan_tiers(&ds, &[2, 2]).is_err());
        assert!(plan_tiers(&ds, &[4]).is_err());
        assert!(plan_tiers(&ds, &[0, 1]).is_err());
    }

    #[test]
    fn clamps_default_cutoffs_for_small_catalogs() {
        assert_eq!(TierPlan::clamp_cutoffs(&DEFAULT_TIER_CUTOFFS, 300), Vec::<u32>::new());
        assert_eq!(TierPlan::clamp_cutoffs(&DEFAULT_TIER_CUTOFFS, 1000), vec![500]);
    }

    proptest! {
        #[test]
        fn plan_is_a_sorted_bijection(counts in prop::collection::vec(0u32..40, 1..30)) {
            let ds = with_item_counts(&counts);
            let n = counts.len() as u32;
            let cutoffs: Vec<u32> = [n / 3, 2 * n / 3].into_iter().filter(|&c| c > 0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
            let plan = plan_tiers(&ds, &cutoffs).unwrap();
            for item in 0..n {
                prop_assert_eq!(plan.original(plan.remap(item)), item);
            }
            for w in plan.order().windows(2) {
                prop_assert!(counts[w[0] as usize] >= counts[w[1] as usize]);
            }
            if !ds.is_empty() {
                let total: f64 = plan.coverage().iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
