//! Sparse stochastic gradients of the scaled energy and the Langevin step.
//!
//! The sampled density is `exp(-s * F)` with `s = eps / (4B)` and
//!
//! ```text
//! F = lambda_r * sum_ij w_i (r_ij - u_i.v_j)^2 + sum_i u_i' Lu u_i + sum_j v_j' Lv v_j.
//! ```
//!
//! The scale is folded into the precisions once, in [`GradientContext::new`]:
//! `lambda_r~ = 2 s lambda_r` and `L~ = 2 s L`, the factor 2 coming from
//! differentiating the squares. For one triple drawn uniformly from the `N`
//! ratings the estimate
//!
//! ```text
//! g_u = -N w_i lambda_r~ e v_j + (N / N_i) Lu~ o u_i
//! g_v = -N w_i lambda_r~ e u_i + (N / N_j) Lv~ o v_j
//! ```
//!
//! is unbiased for the gradient of `s * F`.

use crate::dataset::RatingTriple;
use crate::error::{Error, Result};
use crate::model::{dot, FactorModel, HyperParams};

use super::ledger::NoiseLedger;
use super::noise::{NoiseSource, Row};

/// Everything the per-triple gradient needs, with precisions pre-scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientContext {
    pub n: f64,
    pub user_counts: Vec<u32>,
    pub item_counts: Vec<u32>,
    pub weights: Vec<f64>,
    pub lambda_r: f64,
    pub lambda_u: Vec<f64>,
    pub lambda_v: Vec<f64>,
}

impl GradientContext {
    /// `scale` is `eps / (4B)`; `hp` holds the unscaled precisions.
    pub fn new(
        scale: f64,
        hp: &HyperParams,
        weights: &[f64],
        user_counts: &[u32],
        item_counts: &[u32],
    ) -> Result<Self> {
        if weights.len() != user_counts.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} users",
                weights.len(),
                user_counts.len()
            )));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let n: u64 = user_counts.iter().map(|&c| c as u64).sum();
        let mut ctx = GradientContext {
            n: n as f64,
            user_counts: user_counts.to_vec(),
            item_counts: item_counts.to_vec(),
            weights: weights.to_vec(),
            lambda_r: 0.0,
            lambda_u: Vec::new(),
            lambda_v: Vec::new(),
        };
        ctx.set_precisions(scale, hp);
        Ok(ctx)
    }

    pub fn set_precisions(&mut self, scale: f64, hp: &HyperParams) {
        let f = 2.0 * scale;
        self.lambda_r = f * hp.lambda_r;
        self.lambda_u = hp.lambda_u.iter().map(|l| f * l).collect();
        self.lambda_v = hp.lambda_v.iter().map(|l| f * l).collect();
    }

    pub fn k(&self) -> usize {
        self.lambda_u.len()
    }

    /// Writes the gradient estimate for `t` into `gu`, `gv`.
    #[inline]
    pub fn gradient_rows(
        &self,
        t: RatingTriple,
        u: &[f64],
        v: &[f64],
        gu: &mut [f64],
        gv: &mut [f64],
    ) -> Result<()> {
        let (i, j) = (t.user as usize, t.item as usize);
        let n_i = self.user_counts[i];
        let n_j = self.item_counts[j];
        if n_i == 0 || n_j == 0 {
            return Err(Error::InvalidArgument(format!(
                "triple ({}, {}) belongs to a row with no ratings",
                t.user, t.item
            )));
        }
        let n = self.n;
        let e = t.rating as f64 - dot(u, v);
        let coef = -(n * self.weights[i] * self.lambda_r * e);
        let (pu, pv) = (n / n_i as f64, n / n_j as f64);
        for d in 0..u.len() {
            gu[d] = coef * v[d] + pu * self.lambda_u[d] * u[d];
            gv[d] = coef * u[d] + pv * self.lambda_v[d] * v[d];
        }
        Ok(())
    }
}

/// The gradient estimate for `t` at the current `m`.
pub fn scaled_gradient(m: &FactorModel, t: RatingTriple, ctx: &GradientContext) -> Result<(Vec<f64>, Vec<f64>)> {
    let (i, j) = (t.user as usize, t.item as usize);
    if i >= m.n_users() || j >= m.n_items() {
        return Err(Error::IndexOutOfRange {
            kind: if i >= m.n_users() { "user" } else { "item" },
            index: if i >= m.n_users() { i } else { j },
            len: if i >= m.n_users() { m.n_users() } else { m.n_items() },
        });
    }
    let mut gu = vec![0.0; m.k()];
    let mut gv = vec![0.0; m.k()];
    ctx.gradient_rows(t, m.user(i), m.item(j), &mut gu, &mut gv)?;
    Ok((gu, gv))
}

/// Scratch buffers for [`langevin_update`].
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    pub gu: Vec<f64>,
    pub gv: Vec<f64>,
}

impl Scratch {
    pub fn new(k: usize) -> Self {
        Scratch { gu: vec![0.0; k], gv: vec![0.0; k] }
    }
}

/// Step `s` on the rows of `t`: pay owed noise, take the gradient step from
/// the caught-up values, add the noise of step `s`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn langevin_update<N: NoiseSource + ?Sized>(
    t: RatingTriple,
    s: u64,
    eta: f64,
    u: &mut [f64],
    v: &mut [f64],
    ctx: &GradientContext,
    ledger: &NoiseLedger,
    noise: &mut N,
    scratch: &mut Scratch,
) -> Result<()> {
    let (ru, rv) = (Row::User(t.user), Row::Item(t.item));
    ledger.catch_up(ru, s - 1, noise, u);
    ledger.catch_up(rv, s - 1, noise, v);
    ctx.gradient_rows(t, u, v, &mut scratch.gu, &mut scratch.gv)?;
    for d in 0..u.len() {
        u[d] -= eta * scratch.gu[d];
        v[d] -= eta * scratch.gv[d];
    }
    ledger.step_noise(ru, s, noise, u);
    ledger.step_noise(rv, s, noise, v);
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Divergence {
            user: t.user,
            item: t.item,
            detail: format!("Langevin step {s} with eta {eta:e} left a non-finite factor"),
        });
    }
    Ok(())
}

/// One Langevin step on `m` for triple `t`, advancing the ledger clock.
///
/// The ledger must have an open epoch (see [`NoiseLedger::begin_epoch`]),
/// whose per-step variance is the `zeta * eta` of this step.
pub fn sgld_step<N: NoiseSource + ?Sized>(
    m: &mut FactorModel,
    t: RatingTriple,
    eta: f64,
    ctx: &GradientContext,
    ledger: &NoiseLedger,
    noise: &mut N,
) -> Result<()> {
    let (i, j) = (t.user as usize, t.item as usize);
    if i >= m.n_users() || j >= m.n_items() {
        return Err(Error::IndexOutOfRange {
            kind: if i >= m.n_users() { "user" } else { "item" },
            index: if i >= m.n_users() { i } else { j },
            len: if i >= m.n_users() { m.n_users() } else { m.n_items() },
        });
    }
    let mut scratch = Scratch::new(m.k());
    let s = ledger.tick();
    let (u, v) = m.rows_mut(i, j);
    langevin_update(t, s, eta, u, v, ctx, ledger, noise, &mut scratch)
}

/// Pays every row's outstanding noise up to the current clock.
pub fn catch_up_all<N: NoiseSource + ?Sized>(m: &mut FactorModel, ledger: &NoiseLedger, noise: &mut N) {
    let now = ledger.clock();
    for i in 0..m.n_users() {
        ledger.catch_up(Row::User(i as u32), now, noise, m.user_mut(i));
    }
    for j in 0..m.n_items() {
        ledger.catch_up(Row::Item(j as u32), now, noise, m.item_mut(j));
    }
}
