//! Synthetic rating generators with known structure.

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingDataset, RatingRange, RatingTriple};
use crate::error::{Error, Result};
use crate::seed;

/// Ratings `offset + <u*, v*> + N(0, noise_sd^2)` clipped to `range`, on a
/// uniformly random fraction `density` of each user's row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub rank: usize,
    pub density: f64,
    pub noise_sd: f64,
    pub factor_sd: f64,
    pub offset: f64,
    pub range: RatingRange,
}

impl Default for LowRankSpec {
    fn default() -> Self {
        LowRankSpec {
            n_users: 200,
            n_items: 300,
            rank: 5,
            density: 0.2,
            noise_sd: 0.1,
            factor_sd: 0.5,
            offset: 3.0,
            range: RatingRange::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LowRank {
    pub data: RatingDataset,
    /// Row-major `n_users x rank`.
    pub user_factors: Vec<f64>,
    /// Row-major `n_items x rank`.
    pub item_factors: Vec<f64>,
}

impl LowRank {
    /// Noise-free rating of `(i, j)`, before clipping.
    pub fn truth(&self, spec: &LowRankSpec, i: usize, j: usize) -> f64 {
        truth(spec, &self.user_factors, &self.item_factors, i, j)
    }
}

fn truth(spec: &LowRankSpec, uf: &[f64], vf: &[f64], i: usize, j: usize) -> f64 {
    let r = spec.rank;
    let u = &uf[i * r..(i + 1) * r];
    let v = &vf[j * r..(j + 1) * r];
    spec.offset + u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
}

pub fn low_rank(spec: &LowRankSpec, seed: u64) -> Result<LowRank> {
    if spec.n_users == 0 || spec.n_items == 0 || spec.rank == 0 {
        return Err(Error::InvalidArgument("sizes and rank must be >= 1".into()));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density must lie in (0, 1], got {}", spec.density)));
    }
    let mut rng = seed::rng(seed, "synth");
    let factor = Normal::new(0.0, spec.factor_sd)
        .map_err(|e| Error::InvalidArgument(format!("factor_sd: {e}")))?;
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::InvalidArgument(format!("noise_sd: {e}")))?;
    let user_factors: Vec<f64> = (0..spec.n_users * spec.rank).map(|_| factor.sample(&mut rng)).collect();
    let item_factors: Vec<f64> = (0..spec.n_items * spec.rank).map(|_| factor.sample(&mut rng)).collect();

    let per_user = ((spec.n_items as f64 * spec.density).round() as usize).clamp(1, spec.n_items);
    let mut triples = Vec::with_capacity(per_user * spec.n_users);
    for i in 0..spec.n_users {
        let mut items = sample(&mut rng, spec.n_items, per_user).into_vec();
        items.sort_unstable();
        for j in items {
            let r = spec.range.clamp(truth(spec, &user_factors, &item_factors, i, j) + noise.sample(&mut rng));
            triples.push(RatingTriple::new(i as u32, j as u32, r as f32));
        }
    }
    let data = RatingDataset::from_triples(triples, spec.n_users, spec.n_items, spec.range)?;
    Ok(LowRank { data, user_factors, item_factors })
}

/// Ratings whose item popularity follows `p_j ~ (j + 1)^-exponent`, users
/// uniform, integer ratings uniform on the range.
pub fn power_law(
    n_users: usize,
    n_items: usize,
    n_ratings: usize,
    exponent: f64,
    seed: u64,
) -> Result<RatingDataset> {
    if n_users == 0 || n_items == 0 {
        return Err(Error::InvalidArgument("sizes must be >= 1".into()));
    }
    let mut rng = seed::rng(seed, "synth-power-law");
    let weights: Vec<f64> = (0..n_items).map(|j| (j as f64 + 1.0).powf(-exponent)).collect();
    let items = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let triples = (0..n_ratings)
        .map(|_| {
            let j = items.sample(&mut rng);
            let i = rng.random_range(0..n_users);
            let r = rng.random_range(1..=5) as f32;
            RatingTriple::new(i as u32, j as u32, r)
        })
        .collect();
    RatingDataset::from_triples(triples, n_users, n_items, RatingRange::default())
}
