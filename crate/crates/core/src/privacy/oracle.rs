//! Exact enumeration of the scaled posterior on tiny problems.
//!
//! Every user and item has one scalar factor and every factor ranges over
//! the same grid. Points whose predictions leave `[r_min - kappa,
//! r_max + kappa]` for some pair are outside the support, exactly as the
//! resampling loop removes them. The densities of two neighbouring datasets
//! are normalized over the support and compared pointwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingRange, RatingTriple};
use crate::error::{Error, Result};
use crate::preprocess::BoundVariant;

pub const MAX_GRID_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    /// Users of either dataset; a user absent from one dataset simply has no
    /// ratings there.
    pub n_users: usize,
    pub n_items: usize,
    pub range: RatingRange,
    pub kappa: f64,
    pub tau: usize,
    pub rho: f64,
    pub lambda: f64,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `max |log P(theta) - log P'(theta)|` over the support.
    pub max_log_ratio: f64,
    /// Shared bound `B` used for both densities.
    pub bound: f64,
    pub support: usize,
}

/// `points` evenly spaced values on `[lo, hi]`.
pub fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect(),
    }
}

fn weights(inst: &TinyInstance, ratings: &[RatingTriple]) -> Vec<(f64, usize)> {
    let mut counts = vec![0usize; inst.n_users];
    for t in ratings {
        counts[t.user as usize] += 1;
    }
    counts
        .into_iter()
        .map(|m| {
            let w = if m == 0 { inst.rho } else { inst.rho.min(inst.tau as f64 / m as f64) };
            (w, m)
        })
        .collect()
}

/// Enumerates both densities and returns the largest pointwise log ratio.
/// Both datasets must already be trimmed to `tau` ratings per user.
pub fn exp_mechanism_oracle(
    inst: &TinyInstance,
    a: &[RatingTriple],
    b: &[RatingTriple],
    epsilon: f64,
) -> Result<OracleResult> {
    let n_params = inst.n_users + inst.n_items;
    let g = inst.grid.len();
    let points = (g as f64).powi(n_params as i32);
    if g == 0 || n_params == 0 || points > MAX_GRID_POINTS as f64 {
        return Err(Error::InvalidArgument(format!(
            "{g}^{n_params} grid points; the oracle handles at most {MAX_GRID_POINTS}"
        )));
    }
    for t in a.iter().chain(b) {
        if t.user as usize >= inst.n_users || t.item as usize >= inst.n_items {
            return Err(Error::InvalidArgument(format!("triple ({}, {}) outside the instance", t.user, t.item)));
        }
        if !inst.range.contains(t.rating as f64) {
            return Err(Error::InvalidArgument(format!("rating {} outside the range", t.rating)));
        }
    }
    let (wa, wb) = (weights(inst, a), weights(inst, b));
    if let Some(&(_, m)) = wa.iter().chain(&wb).find(|&&(_, m)| m > inst.tau) {
        return Err(Error::InvalidArgument(format!("a user holds {m} > tau ratings; trim first")));
    }
    let c = BoundVariant::RatingRange.residual_bound(inst.range, inst.kappa);
    let bound = wa
        .iter()
        .chain(&wb)
        .map(|&(w, m)| m.min(inst.tau) as f64 * w * c)
        .fold(0.0, f64::max);
    if bound <= 0.0 {
        return Err(Error::InvalidArgument("both datasets are empty".into()));
    }
    let s = epsilon / (4.0 * bound);
    let (lo, hi) = (inst.range.min - inst.kappa, inst.range.max + inst.kappa);

    let objective = |theta: &[f64], ratings: &[RatingTriple], w: &[(f64, usize)]| -> f64 {
        let fit: f64 = ratings
            .iter()
            .map(|t| {
                let e = t.rating as f64 - theta[t.user as usize] * theta[inst.n_users + t.item as usize];
                w[t.user as usize].0 * e * e
            })
            .sum();
        fit + inst.lambda * theta.iter().map(|x| x * x).sum::<f64>()
    };

    let energies: Vec<(f64, f64)> = (0..points as usize)
        .into_par_iter()
        .filter_map(|mut idx| {
            let mut theta = vec![0.0; n_params];
            for x in theta.iter_mut() {
                *x = inst.grid[idx % g];
                idx /= g;
            }
            let (us, vs) = theta.split_at(inst.n_users);
            let inside = us.iter().all(|u| vs.iter().all(|v| (lo..=hi).contains(&(u * v))));
            inside.then(|| (s * objective(&theta, a, &wa), s * objective(&theta, b, &wb)))
        })
        .collect();
    if energies.is_empty() {
        return Err(Error::InvalidArgument("no grid point satisfies the constraint".into()));
    }
    let log_z = |pick: fn(&(f64, f64)) -> f64| {
        let min = energies.iter().map(pick).fold(f64::INFINITY, f64::min);
        let sum: f64 = energies.iter().map(|e| (min - pick(e)).exp()).sum();
        -min + sum.ln()
    };
    let (za, zb) = (log_z(|e| e.0), log_z(|e| e.1));
    let max_log_ratio = energies
        .iter()
        .map(|&(ea, eb)| ((-ea - za) - (-eb - zb)).abs())
        .fold(0.0, f64::max);
    Ok(OracleResult { max_log_ratio, bound, support: energies.len() })
}
