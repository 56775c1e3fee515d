//! Trimming, reweighting and per-user loss bounds.
//!
//! For ratings in `[r_min, r_max]` and predictions constrained to
//! `[r_min - kappa, r_max + kappa]`, one squared residual is at most
//! `(r_max - r_min + kappa)^2`. A user holding `min(tau, m_i)` ratings with
//! weight `w_i` therefore moves the objective by at most
//! `B_i = min(tau, m_i) * w_i * (r_max - r_min + kappa)^2`, and `B = max_i B_i`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingDataset, RatingRange};
use crate::error::{Error, Result};
use crate::seed;

/// Which per-rating residual bound enters `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundVariant {
    /// `(r_max - r_min + kappa)^2`.
    #[default]
    RatingRange,
    /// `(5 - 1 + kappa)^2` regardless of the declared range; reproduces the
    /// historical Netflix/Yahoo budgets (B = 2500 and B = 5000).
    FiveStar,
    /// `(r_max + kappa)^2`, a looser bound that also holds when ratings are
    /// only known to be non-negative.
    Conservative,
}

impl BoundVariant {
    pub fn residual_bound(self, range: RatingRange, kappa: f64) -> f64 {
        let span = match self {
            BoundVariant::RatingRange => range.width() + kappa,
            BoundVariant::FiveStar => 4.0 + kappa,
            BoundVariant::Conservative => range.max + kappa,
        };
        span * span
    }
}

/// Privacy parameters together with the derived bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub kappa: f64,
    pub tau: usize,
    pub rho: f64,
    pub range: RatingRange,
    pub variant: BoundVariant,
    /// Global bound `B`.
    pub bound: f64,
    pub weights: Vec<f64>,
    pub user_counts: Vec<u32>,
    /// `B_i` per user.
    pub user_bounds: Vec<f64>,
    /// Personalized loss `eps_i = eps * B_i / (2B)`.
    pub user_epsilons: Vec<f64>,
}

impl PrivacyBudget {
    /// Factor `eps / (4B)` multiplying the objective in the sampled density.
    pub fn scale(&self) -> f64 {
        self.epsilon / (4.0 * self.bound)
    }

    /// The same bounds with a different global epsilon.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_positive("epsilon", epsilon)?;
        let mut b = self.clone();
        b.epsilon = epsilon;
        b.user_epsilons = personalized_epsilons(epsilon, self.bound, &self.user_bounds);
        Ok(b)
    }

    pub fn n_users(&self) -> usize {
        self.weights.len()
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Caps every user at `tau` ratings, keeping a uniform random subset of the
/// heavy raters' ratings. Users at or below the cap are untouched.
pub fn trim(ds: &RatingDataset, tau: usize, seed: u64) -> Result<RatingDataset> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let mut kept = Vec::with_capacity(ds.len());
    for u in 0..ds.n_users() {
        let ratings = ds.user_ratings(u);
        if ratings.len() <= tau {
            kept.extend_from_slice(ratings);
        } else {
            let mut rng = seed::rng_indexed(seed, seed::TRIM, u as u64);
            let mut picked = index::sample(&mut rng, ratings.len(), tau).into_vec();
            picked.sort_unstable();
            kept.extend(picked.into_iter().map(|k| ratings[k]));
        }
    }
    ds.with_triples(kept)
}

/// Per-user weights `w_i = min(rho, B_ref / (m_i * c))` with `B_ref = tau * c`,
/// which reduces to `min(rho, tau / m_i)`; the residual bound `c` cancels.
/// Users without ratings get `rho`.
pub fn compute_weights(ds: &RatingDataset, tau: usize, rho: f64) -> Result<Vec<f64>> {
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be >= 0, got {rho}")));
    }
    Ok((0..ds.n_users())
        .map(|u| match ds.user_count(u) {
            0 => rho,
            m => rho.min(tau as f64 / m as f64),
        })
        .collect())
}

pub(crate) fn personalized_epsilons(epsilon: f64, bound: f64, user_bounds: &[f64]) -> Vec<f64> {
    // eps / (2B) first: at eps = 4B this is exactly 2, so eps_i = 2 B_i exactly.
    let per_unit = epsilon / (2.0 * bound);
    user_bounds
        .iter()
        .map(|&b_i| per_unit * b_i)
        .collect()
}

/// Computes `B_i`, `B` and the personalized losses for a trimmed dataset.
pub fn compute_budget(
    ds: &RatingDataset,
    tau: usize,
    kappa: f64,
    epsilon: f64,
    weights: &[f64],
    variant: BoundVariant,
) -> Result<PrivacyBudget> {
    check_positive("epsilon", epsilon)?;
    check_positive("kappa", kappa)?;
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    if weights.len() != ds.n_users() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} users",
            weights.len(),
            ds.n_users()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("weight {w} is not >= 0")));
    }

    let c = variant.residual_bound(ds.range(), kappa);
    let user_counts = ds.user_counts();
    let user_bounds: Vec<f64> = user_counts
        .iter()
        .zip(weights)
        .map(|(&m, &w)| (m as usize).min(tau) as f64 * w * c)
        .collect();
    let bound = user_bounds.iter().copied().fold(0.0, f64::max);
    if bound <= 0.0 {
        return Err(Error::InvalidArgument(
            "every user has zero weight or no ratings; the bound B is 0".into(),
        ));
    }
    let rho = weights.iter().copied().fold(0.0, f64::max);

    Ok(PrivacyBudget {
        epsilon,
        kappa,
        tau,
        rho,
        range: ds.range(),
        variant,
        bound,
        weights: weights.to_vec(),
        user_epsilons: personalized_epsilons(epsilon, bound, &user_bounds),
        user_counts,
        user_bounds,
    })
}

/// Parameters of the trim -> weights -> budget chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetParams {
    pub tau: usize,
    pub kappa: f64,
    pub rho: f64,
    /// Defaults to `4B`, the plain posterior.
    pub epsilon: Option<f64>,
    pub variant: BoundVariant,
}

impl Default for BudgetParams {
    fn default() -> Self {
        BudgetParams {
            tau: 100,
            kappa: 1.0,
            rho: 1.0,
            epsilon: None,
            variant: BoundVariant::RatingRange,
        }
    }
}

/// Runs trim -> weights -> budget.
pub fn prepare(
    ds: &RatingDataset,
    params: &BudgetParams,
    seed: u64,
) -> Result<(RatingDataset, PrivacyBudget)> {
    let trimmed = trim(ds, params.tau, seed)?;
    let weights = compute_weights(&trimmed, params.tau, params.rho)?;
    // Compute B first with a placeholder epsilon, then settle epsilon = 4B if unset.
    let budget = compute_budget(&trimmed, params.tau, params.kappa, 1.0, &weights, params.variant)?;
    let epsilon = params.epsilon.unwrap_or(4.0 * budget.bound);
    let mut budget = budget.with_epsilon(epsilon)?;
    budget.rho = params.rho;
    Ok((trimmed, budget))
}

/// One line of the budget report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBudgetRecord {
    pub user: u64,
    pub ratings: u32,
    pub weight: f64,
    pub bound: f64,
    pub epsilon: f64,
}

/// Structured budget summary written next to a preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub epsilon: f64,
    pub kappa: f64,
    pub tau: usize,
    pub rho: f64,
    pub rating_min: f64,
    pub rating_max: f64,
    pub variant: BoundVariant,
    pub bound: f64,
    pub users: Vec<UserBudgetRecord>,
}

impl BudgetReport {
    pub fn new(budget: &PrivacyBudget, user_ids: &[u64]) -> Self {
        BudgetReport {
            epsilon: budget.epsilon,
            kappa: budget.kappa,
            tau: budget.tau,
            rho: budget.rho,
            rating_min: budget.range.min,
            rating_max: budget.range.max,
            variant: budget.variant,
            bound: budget.bound,
            users: (0..budget.n_users())
                .map(|u| UserBudgetRecord {
                    user: user_ids[u],
                    ratings: budget.user_counts[u],
                    weight: budget.weights[u],
                    bound: budget.user_bounds[u],
                    epsilon: budget.user_epsilons[u],
                })
                .collect(),
        }
    }

    /// Rebuilds the budget; records must be in dense user order.
    pub fn to_budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            epsilon: self.epsilon,
            kappa: self.kappa,
            tau: self.tau,
            rho: self.rho,
            range: RatingRange {
                min: self.rating_min,
                max: self.rating_max,
            },
            variant: self.variant,
            bound: self.bound,
            weights: self.users.iter().map(|r| r.weight).collect(),
            user_counts: self.users.iter().map(|r| r.ratings).collect(),
            user_bounds: self.users.iter().map(|r| r.bound).collect(),
            user_epsilons: self.users.iter().map(|r| r.epsilon).collect(),
        }
    }
}
