//! End-to-end private release and privacy accounting.
//!
//! [`run_dpmf`] trims and reweights the ratings, bounds every user's
//! contribution, draws one sample of `exp(-(eps / 4B) F)` with the Langevin
//! sampler and redraws while some prediction leaves `[r_min - kappa,
//! r_max + kappa]`. Only the item factors are published.

mod constraint;
mod oracle;

use serde::{Deserialize, Serialize};

pub use constraint::{check_constraint, sample_until, ConstraintScope, Violation};
pub use oracle::{exp_mechanism_oracle, grid, OracleResult, TinyInstance, MAX_GRID_POINTS};

use crate::dataset::{build_blocks, plan_tiers, BlockOptions, BlockedDataset, RatingDataset, TierPlan, DEFAULT_TIER_CUTOFFS};
use crate::error::{Error, Result};
use crate::model::{FactorModel, HyperParams, ItemFactors, DEFAULT_INIT_SCALE};
use crate::preprocess::{prepare, BudgetParams, PrivacyBudget};
use crate::seed;
use crate::sgld::{sample, SgldConfig, TraceRecord};

pub const DEFAULT_RETRY_LIMIT: usize = 10;

/// Statement attached to every report: the guarantee is exact only for an
/// exact posterior sample.
pub const APPROXIMATE_SAMPLE_CAVEAT: &str = "The guarantee holds for an exact sample of the scaled posterior. \
The released sample comes from a finite Langevin run, for which the guarantee weakens to (eps, (1 + e^eps) delta) \
with delta the total-variation distance to the target; delta is not measured.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPrivacy {
    pub user: u64,
    pub ratings: u32,
    pub weight: f64,
    pub bound: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    /// Loss of a single rating, `eps / tau`.
    pub rating_epsilon: f64,
    pub kappa: f64,
    pub tau: usize,
    pub rho: f64,
    pub bound: f64,
    pub retries: usize,
    pub constraint: String,
    pub caveat: String,
    pub users: Vec<UserPrivacy>,
}

impl PrivacyReport {
    pub fn user_epsilons(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.epsilon).collect()
    }

    pub fn median_user_epsilon(&self) -> f64 {
        let mut e = self.user_epsilons();
        if e.is_empty() {
            return 0.0;
        }
        e.sort_by(|a, b| a.total_cmp(b));
        let n = e.len();
        if n % 2 == 1 {
            e[n / 2]
        } else {
            0.5 * (e[n / 2 - 1] + e[n / 2])
        }
    }
}

/// Per-user losses `eps_i = eps B_i / (2B)` and the rating-level loss `eps / tau`.
/// `user_ids` maps dense user indices to original ids.
pub fn accounting(budget: &PrivacyBudget, epsilon: f64, user_ids: &[u64]) -> Result<PrivacyReport> {
    let b = budget.with_epsilon(epsilon)?;
    if user_ids.len() != b.n_users() {
        return Err(Error::InvalidArgument(format!(
            "{} user ids for {} users",
            user_ids.len(),
            b.n_users()
        )));
    }
    Ok(PrivacyReport {
        epsilon,
        rating_epsilon: epsilon / b.tau as f64,
        kappa: b.kappa,
        tau: b.tau,
        rho: b.rho,
        bound: b.bound,
        retries: 0,
        constraint: String::new(),
        caveat: APPROXIMATE_SAMPLE_CAVEAT.to_string(),
        users: (0..b.n_users())
            .map(|i| UserPrivacy {
                user: user_ids[i],
                ratings: b.user_counts[i],
                weight: b.weights[i],
                bound: b.user_bounds[i],
                epsilon: b.user_epsilons[i],
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseParams {
    pub k: usize,
    /// Ridge weight of the objective before scaling.
    pub lambda: f64,
    pub init_scale: f64,
    pub retry_limit: usize,
    pub constraint: ConstraintScope,
    pub sgld: SgldConfig,
    pub seed: u64,
}

impl Default for ReleaseParams {
    fn default() -> Self {
        ReleaseParams {
            k: 16,
            lambda: 5e-3,
            init_scale: DEFAULT_INIT_SCALE,
            retry_limit: DEFAULT_RETRY_LIMIT,
            constraint: ConstraintScope::default(),
            sgld: SgldConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DpRelease {
    /// The published artifact.
    pub released: ItemFactors,
    /// The full accepted sample, rows in the blocked dataset's order. Kept
    /// local: it contains every user's factors.
    pub sample: FactorModel,
    pub report: PrivacyReport,
    pub trace: Vec<TraceRecord>,
}

/// Samples, checks the constraint and resamples as needed on an already
/// trimmed and blocked dataset whose users match `budget`.
pub fn release(data: &BlockedDataset, budget: &PrivacyBudget, params: &ReleaseParams) -> Result<DpRelease> {
    let meta = data.meta();
    if params.k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let hp = HyperParams::from_ridge(params.k, params.lambda);
    let mut constraint_rng = seed::rng(params.seed, seed::CONSTRAINT);
    let ((sample_out, _), retries) = sample_until(
        params.retry_limit,
        budget.kappa,
        |attempt| {
            let init_seed = seed::substream_indexed(params.seed, seed::INIT, attempt as u64);
            let model = FactorModel::init(meta.n_users, meta.n_items, params.k, params.init_scale, init_seed)?;
            let cfg = SgldConfig {
                seed: seed::substream_indexed(params.sgld.seed, "attempt", attempt as u64),
                ..params.sgld.clone()
            };
            let out = sample(model, data, budget, hp.clone(), &cfg, None)?;
            Ok((out, attempt))
        },
        |(out, attempt)| {
            let v = check_constraint(&out.model, data, budget.range, budget.kappa, params.constraint, &mut constraint_rng)?;
            if let Some(v) = v {
                log::warn!(
                    "attempt {attempt}: prediction {:.3} for ({}, {}) is outside the allowed interval",
                    v.prediction,
                    v.user,
                    v.item
                );
            }
            Ok(v.is_none())
        },
    )?;

    let mut report = accounting(budget, budget.epsilon, &meta.user_ids)?;
    report.retries = retries;
    report.constraint = params.constraint.describe(meta.n_users, meta.n_items);
    Ok(DpRelease {
        released: ItemFactors::from_model(&sample_out.model, &meta.item_ids)?,
        sample: sample_out.model,
        report,
        trace: sample_out.trace,
    })
}

/// The whole pipeline in memory: trim, weights, budget, tiering, blocking,
/// sampling with resampling, release of V.
pub fn run_dpmf(
    ds: &RatingDataset,
    budget_params: &BudgetParams,
    params: &ReleaseParams,
    block_opts: BlockOptions,
) -> Result<DpRelease> {
    let (trimmed, budget) = prepare(ds, budget_params, seed::substream(params.seed, seed::TRIM))?;
    let cutoffs = TierPlan::clamp_cutoffs(&DEFAULT_TIER_CUTOFFS, trimmed.n_items());
    let plan = plan_tiers(&trimmed, &cutoffs)?;
    let data = build_blocks(&trimmed, &plan, block_opts)?;
    release(&data, &budget, params)
}
