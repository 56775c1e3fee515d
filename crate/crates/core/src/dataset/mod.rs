//! Rating data: ingestion, popularity tiers and the user-blocked layout.
//!
//! A [`RatingDataset`] keeps its triples grouped by user (users ascending,
//! each user's ratings ascending by item), which is the order every
//! downstream stage relies on. Dense indices are assigned in ascending order
//! of the original ids, and the original ids are retained for output.

mod blocks;
mod ingest;
mod tiers;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use blocks::{
    build_blocks, read_blocks, tiered_update_order, write_blocks, BlockEntry, BlockMeta,
    BlockOptions, BlockReader, BlockStream, BlockedDataset, UserBlock, DEFAULT_USERS_PER_BLOCK,
};
pub use ingest::{ingest, ingest_path, InputFormat, Schema};
pub use tiers::{plan_tiers, TierPlan, DEFAULT_TIER_CUTOFFS};

/// One observed rating. Ids are dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingTriple {
    pub user: u32,
    pub item: u32,
    pub rating: f32,
}

impl RatingTriple {
    pub fn new(user: u32, item: u32, rating: f32) -> Self {
        RatingTriple { user, item, rating }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingRange {
    pub min: f64,
    pub max: f64,
}

impl RatingRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidArgument(format!(
                "rating range [{min}, {max}] is empty or not finite"
            )));
        }
        Ok(RatingRange { min, max })
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, r: f64) -> bool {
        r >= self.min && r <= self.max
    }

    pub fn clamp(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }
}

impl Default for RatingRange {
    fn default() -> Self {
        RatingRange { min: 1.0, max: 5.0 }
    }
}

/// Ratings grouped contiguously by user.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    triples: Vec<RatingTriple>,
    user_offsets: Vec<usize>,
    item_counts: Vec<u32>,
    range: RatingRange,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
}

impl RatingDataset {
    /// Builds a dataset over dense ids `0..n_users` and `0..n_items`.
    ///
    /// Duplicate (user, item) pairs keep the last occurrence in input order.
    pub fn from_triples(
        triples: Vec<RatingTriple>,
        n_users: usize,
        n_items: usize,
        range: RatingRange,
    ) -> Result<Self> {
        let user_ids = (0..n_users as u64).collect();
        let item_ids = (0..n_items as u64).collect();
        Self::with_ids(triples, range, user_ids, item_ids)
    }

    /// Like [`from_triples`](Self::from_triples) but with explicit original-id maps
    /// (dense index -> original id).
    pub fn with_ids(
        mut triples: Vec<RatingTriple>,
        range: RatingRange,
        user_ids: Vec<u64>,
        item_ids: Vec<u64>,
    ) -> Result<Self> {
        let n_users = user_ids.len();
        let n_items = item_ids.len();
        if n_users > u32::MAX as usize || n_items > u32::MAX as usize {
            return Err(Error::InvalidArgument("more than 2^32 users or items".into()));
        }
        for t in &triples {
            if t.user as usize >= n_users {
                return Err(Error::IndexOutOfRange {
                    kind: "user",
                    index: t.user as usize,
                    len: n_users,
                });
            }
            if t.item as usize >= n_items {
                return Err(Error::IndexOutOfRange {
                    kind: "item",
                    index: t.item as usize,
                    len: n_items,
                });
            }
            if !range.contains(t.rating as f64) {
                return Err(Error::InvalidArgument(format!(
                    "rating {} outside [{}, {}]",
                    t.rating, range.min, range.max
                )));
            }
        }

        // Stable sort keeps input order among duplicates; the last one wins.
        triples.sort_by_key(|t| (t.user, t.item));
        let mut deduped: Vec<RatingTriple> = Vec::with_capacity(triples.len());
        for t in triples {
            match deduped.last_mut() {
                Some(last) if last.user == t.user && last.item == t.item => *last = t,
                _ => deduped.push(t),
            }
        }

        let mut user_offsets = vec![0usize; n_users + 1];
        let mut item_counts = vec![0u32; n_items];
        for t in &deduped {
            user_offsets[t.user as usize + 1] += 1;
            item_counts[t.item as usize] += 1;
        }
        for i in 0..n_users {
            user_offsets[i + 1] += user_offsets[i];
        }

        Ok(RatingDataset {
            triples: deduped,
            user_offsets,
            item_counts,
            range,
            user_ids,
            item_ids,
        })
    }

    /// A dataset over the same users, items and id maps with different ratings.
    pub fn with_triples(&self, triples: Vec<RatingTriple>) -> Result<Self> {
        Self::with_ids(
            triples,
            self.range,
            self.user_ids.clone(),
            self.item_ids.clone(),
        )
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn range(&self) -> RatingRange {
        self.range
    }

    pub fn triples(&self) -> &[RatingTriple] {
        &self.triples
    }

    pub fn user_ratings(&self, user: usize) -> &[RatingTriple] {
        &self.triples[self.user_offsets[user]..self.user_offsets[user + 1]]
    }

    /// Number of ratings of `user` (m_i).
    pub fn user_count(&self, user: usize) -> usize {
        self.user_offsets[user + 1] - self.user_offsets[user]
    }

    pub fn user_counts(&self) -> Vec<u32> {
        (0..self.n_users())
            .map(|u| self.user_count(u) as u32)
            .collect()
    }

    pub fn item_counts(&self) -> &[u32] {
        &self.item_counts
    }

    pub fn user_ids(&self) -> &[u64] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u64] {
        &self.item_ids
    }

    /// Splits each user's ratings into train/test parts, holding out a
    /// `fraction` of every user's ratings (rounded down, at least one rating
    /// is always kept for training).
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(RatingDataset, RatingDataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "holdout fraction {fraction} not in [0, 1)"
            )));
        }
        let mut rng = seed::rng(seed, seed::SPLIT);
        let mut train = Vec::with_capacity(self.len());
        let mut test = Vec::new();
        for u in 0..self.n_users() {
            let mut ratings = self.user_ratings(u).to_vec();
            ratings.shuffle(&mut rng);
            let held = ((ratings.len() as f64 * fraction) as usize).min(ratings.len().saturating_sub(1));
            test.extend_from_slice(&ratings[..held]);
            train.extend_from_slice(&ratings[held..]);
        }
        Ok((self.with_triples(train)?, self.with_triples(test)?))
    }
}
