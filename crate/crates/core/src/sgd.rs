//! Cache-aware SGD over user-blocked, popularity-tiered data.

use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{tiered_update_order, BlockedDataset, RatingDataset, RatingTriple, UserBlock};
use crate::error::{Error, Result};
use crate::hogwild::SharedModel;
use crate::model::{dot, save_model, FactorModel};
use crate::pipeline::{run_epoch, BlockWorker, SnapshotHook};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub eta0: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub workers: usize,
    pub prefetch: bool,
    pub prefetch_stride: usize,
    /// Snapshot every this many finished blocks; 0 disables snapshots.
    pub snapshot_every_blocks: usize,
    pub snapshot_path: Option<PathBuf>,
    /// Evaluate the full training objective after every epoch (one extra pass).
    pub eval_train: bool,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            eta0: 0.02,
            gamma: 1.0,
            lambda: 5e-3,
            epochs: 20,
            workers: 1,
            prefetch: false,
            prefetch_stride: 2,
            snapshot_every_blocks: 0,
            snapshot_path: None,
            eval_train: true,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return bad("eta0 must be positive");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be >= 0");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if self.snapshot_every_blocks > 0 && self.snapshot_path.is_none() {
            return bad("snapshot_every_blocks needs snapshot_path");
        }
        Ok(())
    }
}

/// `eta_t = eta0 / t^gamma` for epoch `t >= 1`.
pub fn learning_rate(eta0: f64, gamma: f64, epoch: usize) -> f64 {
    eta0 / (epoch as f64).powf(gamma)
}

/// One SGD update on a user row and an item row.
///
/// The residual is computed once from the pre-update values and both rows
/// are updated from their old values. `biases` carries `(b_u, b_m, b_0)`.
/// Returns the residual.
#[inline]
pub fn sgd_update(
    u: &mut [f64],
    v: &mut [f64],
    biases: Option<(&mut f64, &mut f64, f64)>,
    rating: f64,
    eta: f64,
    lambda: f64,
) -> f64 {
    let mut pred = dot(u, v);
    if let Some((bu, bm, b0)) = &biases {
        pred += **bu + **bm + *b0;
    }
    let e = rating - pred;
    let shrink = 1.0 - eta * lambda;
    let step = eta * e;
    for (ud, vd) in u.iter_mut().zip(v.iter_mut()) {
        let (u_old, v_old) = (*ud, *vd);
        *ud = shrink * u_old + step * v_old;
        *vd = shrink * v_old + step * u_old;
    }
    if let Some((bu, bm, _)) = biases {
        *bu += eta * (e - lambda * *bu);
        *bm += eta * (e - lambda * *bm);
    }
    e
}

/// Applies one SGD step for `t` to `m` in place.
pub fn sgd_step(m: &mut FactorModel, t: RatingTriple, eta: f64, lambda: f64) -> Result<()> {
    let (i, j) = (t.user as usize, t.item as usize);
    if i >= m.n_users() || j >= m.n_items() {
        return Err(Error::IndexOutOfRange {
            kind: if i >= m.n_users() { "user" } else { "item" },
            index: if i >= m.n_users() { i } else { j },
            len: if i >= m.n_users() { m.n_users() } else { m.n_items() },
        });
    }
    let b0 = m.global_bias();
    let with_bias = m.bias_enabled();
    let mut bu = m.user_bias()[i];
    let mut bm = m.item_bias()[j];
    let (u, v) = m.rows_mut(i, j);
    let biases = with_bias.then_some((&mut bu, &mut bm, b0));
    let e = sgd_update(u, v, biases, t.rating as f64, eta, lambda);
    if !e.is_finite() || u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(divergence(t, e));
    }
    if with_bias {
        let (ub, ib) = m.biases_mut();
        ub[i] = bu;
        ib[j] = bm;
    }
    Ok(())
}

fn divergence(t: RatingTriple, e: f64) -> Error {
    Error::Divergence {
        user: t.user,
        item: t.item,
        detail: format!("rating {} gave residual {e}", t.rating),
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub eta: f64,
    pub seconds: f64,
    pub ratings: u64,
    pub objective: Option<f64>,
    pub train_rmse: Option<f64>,
    pub validation_rmse: Option<f64>,
}

impl EpochRecord {
    pub fn throughput(&self) -> f64 {
        if self.seconds > 0.0 {
            self.ratings as f64 / self.seconds
        } else {
            0.0
        }
    }
}

/// Writes `epoch,seconds,objective,rmse,throughput` rows; empty fields when a
/// value was not computed.
pub fn write_epoch_log<W: Write>(records: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,seconds,objective,rmse,throughput")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    for r in records {
        writeln!(
            out,
            "{},{:.6},{},{},{:.1}",
            r.epoch,
            r.seconds,
            opt(r.objective),
            opt(r.validation_rmse),
            r.throughput()
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: FactorModel,
    pub log: Vec<EpochRecord>,
}

struct SgdWorker<'a> {
    model: &'a SharedModel,
    tier_ends: &'a [u32],
    eta: f64,
    lambda: f64,
    prefetch: Option<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl BlockWorker for SgdWorker<'_> {
    fn process(&mut self, block: &UserBlock) -> Result<u64> {
        let m = self.model;
        let order = tiered_update_order(block, self.tier_ends);
        for (pos, &idx) in order.iter().enumerate() {
            if let Some(stride) = self.prefetch {
                if let Some(&ahead) = order.get(pos + stride) {
                    m.items.prefetch(block.triples[ahead].item as usize);
                }
            }
            let t = block.triples[idx];
            let (i, j) = (t.user as usize, t.item as usize);
            m.users.load(i, &mut self.u);
            m.items.load(j, &mut self.v);
            let e = if m.bias_enabled {
                let mut bu = m.user_bias.get(i);
                let mut bm = m.item_bias.get(j);
                let e = sgd_update(
                    &mut self.u,
                    &mut self.v,
                    Some((&mut bu, &mut bm, m.global_bias)),
                    t.rating as f64,
                    self.eta,
                    self.lambda,
                );
                m.user_bias.set(i, bu);
                m.item_bias.set(j, bm);
                e
            } else {
                sgd_update(&mut self.u, &mut self.v, None, t.rating as f64, self.eta, self.lambda)
            };
            if !e.is_finite() {
                return Err(divergence(t, e));
            }
            m.users.store(i, &self.u);
            m.items.store(j, &self.v);
        }
        Ok(order.len() as u64)
    }
}

pub(crate) fn check_shape(model: &FactorModel, data: &BlockedDataset) -> Result<()> {
    let meta = data.meta();
    if model.n_users() != meta.n_users || model.n_items() != meta.n_items {
        return Err(Error::InvalidArgument(format!(
            "model is {}x{} but the data is {}x{}",
            model.n_users(),
            model.n_items(),
            meta.n_users,
            meta.n_items
        )));
    }
    Ok(())
}

/// Streams the data once and returns `(objective, rmse)` for `model`.
pub fn evaluate_blocks(
    model: &FactorModel,
    data: &BlockedDataset,
    weights: Option<&[f64]>,
    lambda: f64,
) -> Result<(f64, f64)> {
    check_shape(model, data)?;
    let mut weighted = 0.0;
    let mut sse = 0.0;
    let mut n = 0u64;
    for block in data.blocks()? {
        let block = block?;
        for t in &block.triples {
            let e = t.rating as f64 - model.predict_unchecked(t.user as usize, t.item as usize);
            let w = weights.map_or(1.0, |w| w[t.user as usize]);
            weighted += w * e * e;
            sse += e * e;
            n += 1;
        }
    }
    let (nu, nv) = model.frobenius_sq();
    let rmse = if n > 0 { (sse / n as f64).sqrt() } else { 0.0 };
    Ok((weighted + lambda * (nu + nv), rmse))
}

fn mean_rating(data: &BlockedDataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0u64;
    for block in data.blocks()? {
        for t in &block?.triples {
            sum += t.rating as f64;
            n += 1;
        }
    }
    Ok(if n > 0 { sum / n as f64 } else { 0.0 })
}

/// Trains `model` with SGD following the read/update/write pipeline.
///
/// `validation` must use the same dense user ids and remapped item ids as
/// `data` (e.g. written with the same tier plan).
pub fn train(
    model: FactorModel,
    data: &BlockedDataset,
    cfg: &SgdConfig,
    validation: Option<&RatingDataset>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_shape(&model, data)?;
    let mut model = model;
    if model.bias_enabled() && model.global_bias() == 0.0 {
        model.set_global_bias(mean_rating(data)?);
    }
    let shared = SharedModel::from_model(&model);
    let meta = data.meta();
    let k = model.k();
    let mut log = Vec::with_capacity(cfg.epochs);

    let write_snapshot = || -> Result<()> {
        let path = cfg.snapshot_path.as_ref().expect("validated");
        save_model(&shared.snapshot(), Some(&meta.item_ids), path)
    };
    let hook = SnapshotHook {
        every_blocks: cfg.snapshot_every_blocks,
        write: &write_snapshot,
    };
    let hook = (cfg.snapshot_every_blocks > 0).then_some(&hook);

    for epoch in 1..=cfg.epochs {
        let eta = learning_rate(cfg.eta0, cfg.gamma, epoch);
        let mut workers: Vec<SgdWorker> = (0..cfg.workers)
            .map(|_| SgdWorker {
                model: &shared,
                tier_ends: &meta.tier_ends,
                eta,
                lambda: cfg.lambda,
                prefetch: cfg.prefetch.then_some(cfg.prefetch_stride.max(1)),
                u: vec![0.0; k],
                v: vec![0.0; k],
            })
            .collect();
        let outcome = run_epoch(data, &mut workers, hook)?;

        let current = shared.snapshot();
        let (objective, train_rmse) = if cfg.eval_train {
            let (obj, rmse) = evaluate_blocks(&current, data, None, cfg.lambda)?;
            if !obj.is_finite() {
                return Err(Error::NonFiniteObjective { epoch });
            }
            (Some(obj), Some(rmse))
        } else {
            if !current.all_finite() {
                return Err(Error::NonFiniteObjective { epoch });
            }
            (None, None)
        };
        let validation_rmse = validation.map(|v| current.rmse(v, None)).transpose()?;
        log::debug!(
            "sgd epoch {epoch}: eta={eta:.3e} objective={objective:?} validation_rmse={validation_rmse:?}"
        );
        log.push(EpochRecord {
            epoch,
            eta,
            seconds: outcome.seconds,
            ratings: outcome.ratings,
            objective,
            train_rmse,
            validation_rmse,
        });
    }

    Ok(TrainOutput {
        model: shared.snapshot(),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_blocks, plan_tiers, BlockOptions, RatingRange};

    #[test]
    fn hand_computed_step() {
        let mut m = FactorModel::from_parts(1, 1, 1, vec![1.0], vec![1.0]).unwrap();
        sgd_step(&mut m, RatingTriple::new(0, 0, 2.0), 0.1, 0.0).unwrap();
        assert!((m.user(0)[0] - 1.1).abs() < 1e-15);
        assert!((m.item(0)[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_without_regularization_is_fixed_point() {
        let mut m = FactorModel::from_parts(1, 1, 2, vec![1.0, 0.5], vec![2.0, 2.0]).unwrap();
        let before = m.clone();
        sgd_step(&mut m, RatingTriple::new(0, 0, 3.0), 0.3, 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn biases_follow_the_residual() {
        let mut m = FactorModel::zeros(1, 1, 1);
        m.set_biases(vec![0.0], vec![0.0], 3.0).unwrap();
        sgd_step(&mut m, RatingTriple::new(0, 0, 4.0), 0.5, 0.0).unwrap();
        assert_eq!(m.user_bias()[0], 0.5);
        assert_eq!(m.item_bias()[0], 0.5);
    }

    #[test]
    fn divergence_names_the_triple() {
        let mut m = FactorModel::from_parts(1, 2, 1, vec![1e300], vec![1e300, 0.0]).unwrap();
        match sgd_step(&mut m, RatingTriple::new(0, 0, 1.0), 0.1, 0.0) {
            Err(Error::Divergence { user: 0, item: 0, .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate(0.1, 0.0, 5), 0.1);
        assert_eq!(learning_rate(0.1, 1.0, 4), 0.025);
        let rates: Vec<f64> = (1..10).map(|t| learning_rate(0.02, 0.6, t)).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
    }

    fn toy_blocks() -> (RatingDataset, BlockedDataset) {
        let triples = vec![
            RatingTriple::new(0, 0, 5.0),
            RatingTriple::new(0, 1, 3.0),
            RatingTriple::new(1, 0, 4.0),
            RatingTriple::new(2, 2, 1.0),
            RatingTriple::new(2, 1, 2.0),
        ];
        let ds = RatingDataset::from_triples(triples, 3, 3, RatingRange::default()).unwrap();
        let plan = plan_tiers(&ds, &[1]).unwrap();
        let blocked = build_blocks(&ds, &plan, BlockOptions { users_per_block: 2, shuffle_seed: None }).unwrap();
        (ds, blocked)
    }

    #[test]
    fn zero_epochs_returns_model_unchanged() {
        let (_, blocked) = toy_blocks();
        let m = FactorModel::init(3, 3, 2, 0.1, 1).unwrap();
        let cfg = SgdConfig { epochs: 0, ..Default::default() };
        let out = train(m.clone(), &blocked, &cfg, None).unwrap();
        assert_eq!(out.model, m);
        assert!(out.log.is_empty());
    }

    #[test]
    fn every_epoch_visits_each_rating_once() {
        let (ds, blocked) = toy_blocks();
        let m = FactorModel::init(3, 3, 2, 0.1, 1).unwrap();
        let cfg = SgdConfig { epochs: 3, workers: 2, ..Default::default() };
        let out = train(m, &blocked, &cfg, None).unwrap();
        assert!(out.log.iter().all(|r| r.ratings == ds.len() as u64));
    }

    #[test]
    fn writes_snapshots() {
        let (_, blocked) = toy_blocks();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        let cfg = SgdConfig {
            epochs: 1,
            snapshot_every_blocks: 1,
            snapshot_path: Some(path.clone()),
            ..Default::default()
        };
        train(FactorModel::init(3, 3, 2, 0.1, 1).unwrap(), &blocked, &cfg, None).unwrap();
        let (snap, ids) = crate::model::load_model(&path).unwrap();
        assert_eq!(snap.n_users(), 3);
        assert_eq!(ids.unwrap().len(), 3);
    }

    #[test]
    fn rejects_mismatched_model() {
        let (_, blocked) = toy_blocks();
        let m = FactorModel::init(4, 3, 2, 0.1, 1).unwrap();
        assert!(train(m, &blocked, &SgdConfig::default(), None).is_err());
    }

    #[test]
    fn epoch_log_format() {
        let rec = EpochRecord {
            epoch: 1,
            eta: 0.1,
            seconds: 0.5,
            ratings: 100,
            objective: Some(2.0),
            train_rmse: None,
            validation_rmse: None,
        };
        let mut buf = Vec::new();
        write_epoch_log(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epoch,seconds,objective,rmse,throughput\n1,0.500000,2.000000000,,200.0\n");
    }
}
