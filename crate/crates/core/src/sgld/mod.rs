//! Stochastic gradient Langevin sampler for the scaled posterior.
//!
//! Each step touches one user row and one item row. The Gaussian noise
//! every other row is owed for that step is deferred through a
//! [`NoiseLedger`] and paid in one draw when the row is next touched, plus a
//! full sweep at the end of every epoch.
//!
//! The update is `theta <- theta - eta * g + N(0, zeta * eta)`. With drift
//! `eta * grad(E)` and noise variance `zeta * eta`, the stationary density
//! of the continuous-time limit is `exp(-2 E / zeta)`.

mod gibbs;
mod gradient;
mod ledger;
mod noise;
mod table;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use gibbs::gibbs_hyperparams;
pub use gradient::{catch_up_all, scaled_gradient, sgld_step, GradientContext};
pub use ledger::NoiseLedger;
pub use noise::{NoiseSource, RngNoise, Row, TableNoise};
pub use table::{GaussianTable, DEFAULT_SEGMENT_LEN};

use crate::dataset::{tiered_update_order, BlockedDataset, RatingDataset, UserBlock};
use crate::error::{Error, Result};
use crate::hogwild::SharedModel;
use crate::model::{dot, FactorModel, HyperParams};
use crate::pipeline::{run_epoch, BlockWorker};
use crate::preprocess::PrivacyBudget;
use crate::seed;
use crate::sgd::{check_shape, learning_rate};
use gradient::{langevin_update, Scratch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgldConfig {
    pub eta0: f64,
    pub gamma: f64,
    /// Noise temperature: the per-step variance is `zeta * eta_t`.
    pub zeta: f64,
    pub epochs: usize,
    pub workers: usize,
    /// Gaussian pool size; `None` draws every value from the generator.
    pub table_size: Option<usize>,
    pub segment_len: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Keep the prior precisions at their given values instead of Gibbs steps.
    pub fix_hyperparams: bool,
    pub seed: u64,
}

impl Default for SgldConfig {
    fn default() -> Self {
        SgldConfig {
            eta0: 1e-6,
            gamma: 0.0,
            zeta: 1.0,
            epochs: 20,
            workers: 1,
            table_size: Some(100_000),
            segment_len: DEFAULT_SEGMENT_LEN,
            alpha: 1.0,
            beta: 100.0,
            fix_hyperparams: true,
            seed: 0,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return bad(format!("eta0 must be positive, got {}", self.eta0));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return bad(format!("zeta must lie in (0, 1], got {}", self.zeta));
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        if self.table_size == Some(0) {
            return bad("table_size must be >= 1".into());
        }
        if self.segment_len == 0 {
            return bad("segment_len must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        Ok(())
    }
}

/// Converts a plain SGD step size into the Langevin step size with the same
/// effective per-rating move: the estimate carries a factor `2 * scale * N`.
pub fn langevin_step_size(sgd_eta: f64, scale: f64, n_ratings: u64) -> f64 {
    sgd_eta / (2.0 * scale * n_ratings.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub eta: f64,
    pub seconds: f64,
    pub ratings: u64,
    /// Unscaled energy `lambda_r sum w e^2 + sum u'Lu u + sum v'Lv v`.
    pub objective: f64,
    pub train_rmse: f64,
    pub validation_rmse: Option<f64>,
    pub lambda_u_mean: f64,
    pub lambda_v_mean: f64,
}

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,seconds,objective,rmse,validation_rmse,lambda_u_mean,lambda_v_mean")?;
    for r in records {
        let val = r.validation_rmse.map(|x| format!("{x:.9}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:.6},{:.9},{:.9},{},{:.9},{:.9}",
            r.epoch, r.seconds, r.objective, r.train_rmse, val, r.lambda_u_mean, r.lambda_v_mean
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// The state after the last epoch: the released posterior sample.
    pub model: FactorModel,
    pub hyper: HyperParams,
    pub trace: Vec<TraceRecord>,
}

struct SgldWorker<'a, N> {
    model: &'a SharedModel,
    ledger: &'a NoiseLedger,
    ctx: &'a GradientContext,
    tier_ends: &'a [u32],
    noise: &'a mut N,
    eta: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    scratch: Scratch,
}

impl<N: NoiseSource> BlockWorker for SgldWorker<'_, N> {
    fn process(&mut self, block: &UserBlock) -> Result<u64> {
        let m = self.model;
        let order = tiered_update_order(block, self.tier_ends);
        for &idx in &order {
            let t = block.triples[idx];
            let (i, j) = (t.user as usize, t.item as usize);
            let s = self.ledger.tick();
            m.users.load(i, &mut self.u);
            m.items.load(j, &mut self.v);
            langevin_update(
                t,
                s,
                self.eta,
                &mut self.u,
                &mut self.v,
                self.ctx,
                self.ledger,
                self.noise,
                &mut self.scratch,
            )?;
            m.users.store(i, &self.u);
            m.items.store(j, &self.v);
        }
        Ok(order.len() as u64)
    }
}

/// Builds the configured noise source for worker `w`.
pub fn default_noise(cfg: &SgldConfig) -> Result<impl FnMut(usize) -> Box<dyn NoiseSource>> {
    let table = match cfg.table_size {
        Some(size) => Some(Arc::new(GaussianTable::new(size, cfg.seed)?)),
        None => None,
    };
    let (seed, segment_len) = (cfg.seed, cfg.segment_len);
    Ok(move |w: usize| -> Box<dyn NoiseSource> {
        let s = seed::substream_indexed(seed, seed::SGLD_NOISE, w as u64);
        match &table {
            Some(t) => Box::new(TableNoise::new(Arc::clone(t), segment_len, s)),
            None => Box::new(RngNoise::new(s)),
        }
    })
}

/// Draws one posterior sample starting from `model`.
///
/// `budget` supplies the scale `eps / (4B)` and the per-user weights; it
/// must describe the same (trimmed) users as `data`. `cfg.alpha` and
/// `cfg.beta` override the hyperprior stored in `hp`.
pub fn sample(
    model: FactorModel,
    data: &BlockedDataset,
    budget: &PrivacyBudget,
    hp: HyperParams,
    cfg: &SgldConfig,
    validation: Option<&RatingDataset>,
) -> Result<SampleOutput> {
    let make = default_noise(cfg)?;
    sample_with_noise(model, data, budget, hp, cfg, validation, make)
}

/// [`sample`] with a caller-chosen noise source per worker. Worker 0's
/// source also pays the end-of-epoch sweep.
pub fn sample_with_noise<N, F>(
    model: FactorModel,
    data: &BlockedDataset,
    budget: &PrivacyBudget,
    mut hp: HyperParams,
    cfg: &SgldConfig,
    validation: Option<&RatingDataset>,
    mut make_noise: F,
) -> Result<SampleOutput>
where
    N: NoiseSource,
    F: FnMut(usize) -> N,
{
    cfg.validate()?;
    check_shape(&model, data)?;
    if model.bias_enabled() {
        return Err(Error::InvalidArgument("the sampler does not support bias terms".into()));
    }
    hp.alpha = cfg.alpha;
    hp.beta = cfg.beta;
    hp.validate(model.k())?;
    let meta = data.meta();
    if budget.n_users() != meta.n_users {
        return Err(Error::InvalidArgument(format!(
            "budget covers {} users but the data has {}",
            budget.n_users(),
            meta.n_users
        )));
    }
    let scale = budget.scale();
    let mut ctx = GradientContext::new(scale, &hp, &budget.weights, &meta.user_counts, &meta.item_counts)?;
    let k = model.k();
    let shared = SharedModel::from_model(&model);
    drop(model);
    let mut ledger = NoiseLedger::new(meta.n_users, meta.n_items);
    let mut sources: Vec<N> = (0..cfg.workers).map(&mut make_noise).collect();
    let mut gibbs_rng = seed::rng(cfg.seed, seed::GIBBS);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut current = shared.snapshot();

    for epoch in 1..=cfg.epochs {
        let eta = learning_rate(cfg.eta0, cfg.gamma, epoch);
        ledger.begin_epoch(cfg.zeta * eta);
        let outcome = {
            let mut workers: Vec<SgldWorker<N>> = sources
                .iter_mut()
                .map(|noise| SgldWorker {
                    model: &shared,
                    ledger: &ledger,
                    ctx: &ctx,
                    tier_ends: &meta.tier_ends,
                    noise,
                    eta,
                    u: vec![0.0; k],
                    v: vec![0.0; k],
                    scratch: Scratch::new(k),
                })
                .collect();
            run_epoch(data, &mut workers, None)?
        };

        current = shared.snapshot();
        catch_up_all(&mut current, &ledger, &mut sources[0]);
        if !current.all_finite() {
            return Err(Error::NonFiniteObjective { epoch });
        }
        if !cfg.fix_hyperparams {
            gibbs_hyperparams(&current, &mut hp, &mut gibbs_rng);
            ctx.set_precisions(scale, &hp);
        }
        write_back(&shared, &current);

        let (objective, train_rmse) = energy(&current, data, &budget.weights, &hp)?;
        if !objective.is_finite() {
            return Err(Error::NonFiniteObjective { epoch });
        }
        let validation_rmse = validation.map(|v| current.rmse(v, None)).transpose()?;
        log::debug!("sgld epoch {epoch}: eta={eta:.3e} energy={objective:.4} rmse={train_rmse:.4}");
        trace.push(TraceRecord {
            epoch,
            eta,
            seconds: outcome.seconds,
            ratings: outcome.ratings,
            objective,
            train_rmse,
            validation_rmse,
            lambda_u_mean: mean(&hp.lambda_u),
            lambda_v_mean: mean(&hp.lambda_v),
        });
    }

    Ok(SampleOutput { model: current, hyper: hp, trace })
}

fn write_back(shared: &SharedModel, m: &FactorModel) {
    for i in 0..m.n_users() {
        shared.users.store(i, m.user(i));
    }
    for j in 0..m.n_items() {
        shared.items.store(j, m.item(j));
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Unscaled energy and training RMSE of `m`.
pub fn energy(m: &FactorModel, data: &BlockedDataset, weights: &[f64], hp: &HyperParams) -> Result<(f64, f64)> {
    check_shape(m, data)?;
    let mut fit = 0.0;
    let mut sse = 0.0;
    let mut n = 0u64;
    for block in data.blocks()? {
        for t in &block?.triples {
            let (i, j) = (t.user as usize, t.item as usize);
            let e = t.rating as f64 - dot(m.user(i), m.item(j));
            fit += weights[i] * e * e;
            sse += e * e;
            n += 1;
        }
    }
    let prior = |factors: &[f64], lambda: &[f64]| -> f64 {
        factors
            .chunks_exact(lambda.len())
            .map(|row| row.iter().zip(lambda).map(|(x, l)| l * x * x).sum::<f64>())
            .sum()
    };
    let objective = hp.lambda_r * fit + prior(m.user_factors(), &hp.lambda_u) + prior(m.item_factors(), &hp.lambda_v);
    let rmse = if n > 0 { (sse / n as f64).sqrt() } else { 0.0 };
    Ok((objective, rmse))
}
