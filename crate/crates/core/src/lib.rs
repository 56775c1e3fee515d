//! Differentially private matrix factorization.
//!
//! The crate trains low-rank recommendation models either with plain
//! cache-aware SGD or by drawing a sample from the scaled posterior
//! `exp(-(eps / 4B) * F(U, V))` with stochastic gradient Langevin dynamics.
//! Trimming and per-user reweighting bound each user's contribution to the
//! objective, which turns posterior sampling into an instance of the
//! exponential mechanism and gives every user an individual privacy loss.
//!
//! Module map:
//!
//! * [`dataset`]: ingestion, popularity tiers and the user-blocked on-disk layout.
//! * [`preprocess`]: trimming, reweighting and the per-user loss bounds.
//! * [`model`]: factor matrices, prediction, objective, RMSE and snapshots.
//! * [`sgd`]: the read/update/write training pipeline with Hogwild workers.
//! * [`sgld`]: the Langevin sampler with lazy noise and a Gaussian lookup table.
//! * [`privacy`]: the end-to-end private release, accounting and a brute-force
//!   exponential-mechanism check.
//! * [`recommend`]: the local ridge stage that turns released item factors
//!   into per-user recommendations.

pub mod dataset;
pub mod error;
pub mod model;
pub mod preprocess;
pub mod privacy;
pub mod recommend;
pub mod seed;
pub mod sgd;
pub mod sgld;
pub mod synth;

mod hogwild;
mod pipeline;

pub use error::{Error, Result};
