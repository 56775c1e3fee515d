//! TOML run configuration.
//!
//! Every value can come from a command-line flag, from the config file or
//! from the built-in default, in that order of precedence. Sections and keys:
//!
//! ```toml
//! seed = 0
//!
//! [preprocess]
//! tau = 100
//! kappa = 1.0
//! rho = 1.0
//! bound = "rating-range"      # or "five-star", "conservative"
//! tiers = [500, 4500]
//! users_per_block = 1000
//! shuffle_users = false
//! holdout = 0.0
//!
//! [model]
//! k = 16
//! init_scale = 0.01
//! biases = false              # SGD only
//! lambda = 0.005              # prior precision of the Langevin sampler
//!
//! [sgd]                       # eta0, gamma, lambda, epochs, workers, prefetch, ...
//! [sgld]                      # eta0, gamma, zeta, epochs, workers, table_size, ...
//!
//! [release]
//! epsilon = 100.0             # default: the epsilon stored by preprocess
//! retry_limit = 10
//! constraint = "observed"     # or "exhaustive", or { observed-plus-sample = 1000000 }
//! ```

use std::path::Path;

use anyhow::Context;
use dpmf::dataset::DEFAULT_TIER_CUTOFFS;
use dpmf::model::DEFAULT_INIT_SCALE;
use dpmf::preprocess::BoundVariant;
use dpmf::privacy::{ConstraintScope, DEFAULT_RETRY_LIMIT};
use dpmf::sgd::SgdConfig;
use dpmf::sgld::SgldConfig;
use serde::Deserialize;

use crate::UsageError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub sgd: SgdConfig,
    pub sgld: SgldConfig,
    pub release: ReleaseSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub tau: usize,
    pub kappa: f64,
    pub rho: f64,
    pub bound: BoundVariant,
    pub tiers: Vec<u32>,
    pub users_per_block: usize,
    pub shuffle_users: bool,
    pub holdout: f64,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            tau: 100,
            kappa: 1.0,
            rho: 1.0,
            bound: BoundVariant::RatingRange,
            tiers: DEFAULT_TIER_CUTOFFS.to_vec(),
            users_per_block: dpmf::dataset::DEFAULT_USERS_PER_BLOCK,
            shuffle_users: false,
            holdout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub k: usize,
    pub init_scale: f64,
    pub biases: bool,
    pub lambda: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { k: 16, init_scale: DEFAULT_INIT_SCALE, biases: false, lambda: 5e-3 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseSection {
    pub epsilon: Option<f64>,
    pub retry_limit: usize,
    pub constraint: ConstraintScope,
}

impl Default for ReleaseSection {
    fn default() -> Self {
        ReleaseSection { epsilon: None, retry_limit: DEFAULT_RETRY_LIMIT, constraint: ConstraintScope::default() }
    }
}

impl Config {
    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }
}

/// Parses `observed`, `exhaustive` or `sample:N`.
pub fn parse_constraint(s: &str) -> Result<ConstraintScope, String> {
    match s {
        "observed" => Ok(ConstraintScope::Observed),
        "exhaustive" => Ok(ConstraintScope::Exhaustive),
        _ => s
            .strip_prefix("sample:")
            .and_then(|n| n.parse().ok())
            .map(ConstraintScope::ObservedPlusSample)
            .ok_or_else(|| format!("expected observed, exhaustive or sample:N, got {s:?}")),
    }
}
