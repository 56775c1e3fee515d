//! Factor matrices, prediction and evaluation.
//!
//! Factors are stored row-major per entity so that one user's (or item's)
//! `k` values are contiguous.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingDataset, RatingRange};
use crate::error::{Error, Result};
use crate::seed;

/// Default standard deviation of the initial factors.
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    k: usize,
    n_users: usize,
    n_items: usize,
    users: Vec<f64>,
    items: Vec<f64>,
    user_bias: Vec<f64>,
    item_bias: Vec<f64>,
    global_bias: f64,
    bias_enabled: bool,
}

/// Precisions of the Bayesian view of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Rating precision.
    pub lambda_r: f64,
    /// Diagonal prior precision of user factors.
    pub lambda_u: Vec<f64>,
    /// Diagonal prior precision of item factors.
    pub lambda_v: Vec<f64>,
    /// Gamma hyperprior shape.
    pub alpha: f64,
    /// Gamma hyperprior rate.
    pub beta: f64,
}

impl HyperParams {
    /// `lambda_r = 1`, `Lambda_u = Lambda_v = lambda * I`, `alpha = 1`, `beta = 100`.
    ///
    /// With these values the Langevin energy is exactly the ridge objective
    /// `sum w (r - u.v)^2 + lambda (|U|^2 + |V|^2)`.
    pub fn from_ridge(k: usize, lambda: f64) -> Self {
        HyperParams {
            lambda_r: 1.0,
            lambda_u: vec![lambda; k],
            lambda_v: vec![lambda; k],
            alpha: 1.0,
            beta: 100.0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.lambda_u.len() != k || self.lambda_v.len() != k {
            return Err(Error::InvalidArgument(format!(
                "precision vectors must have length k = {k}"
            )));
        }
        let all = [self.lambda_r, self.alpha, self.beta]
            .into_iter()
            .chain(self.lambda_u.iter().copied())
            .chain(self.lambda_v.iter().copied());
        for v in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "precisions and hyperprior parameters must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

impl FactorModel {
    pub fn zeros(n_users: usize, n_items: usize, k: usize) -> Self {
        FactorModel {
            k,
            n_users,
            n_items,
            users: vec![0.0; n_users * k],
            items: vec![0.0; n_items * k],
            user_bias: vec![0.0; n_users],
            item_bias: vec![0.0; n_items],
            global_bias: 0.0,
            bias_enabled: false,
        }
    }

    /// Factors drawn i.i.d. from `N(0, scale^2)`; biases start at zero.
    pub fn init(n_users: usize, n_items: usize, k: usize, scale: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("latent dimension k must be >= 1".into()));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidArgument(format!("init scale {scale} must be >= 0")));
        }
        let mut m = Self::zeros(n_users, n_items, k);
        if scale > 0.0 {
            let normal = Normal::new(0.0, scale).expect("scale checked");
            let mut rng = seed::rng(seed, seed::INIT);
            for x in m.users.iter_mut().chain(m.items.iter_mut()) {
                *x = normal.sample(&mut rng);
            }
        }
        Ok(m)
    }

    pub fn from_parts(n_users: usize, n_items: usize, k: usize, users: Vec<f64>, items: Vec<f64>) -> Result<Self> {
        if users.len() != n_users * k || items.len() != n_items * k {
            return Err(Error::InvalidArgument("factor buffer sizes do not match n * k".into()));
        }
        let mut m = Self::zeros(n_users, n_items, k);
        m.users = users;
        m.items = items;
        Ok(m)
    }

    pub fn with_biases(mut self, enabled: bool) -> Self {
        self.bias_enabled = enabled;
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    pub fn user(&self, i: usize) -> &[f64] {
        &self.users[i * self.k..(i + 1) * self.k]
    }

    pub fn user_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.users[i * self.k..(i + 1) * self.k]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j * self.k..(j + 1) * self.k]
    }

    pub fn item_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.items[j * self.k..(j + 1) * self.k]
    }

    /// Mutable access to one user row and one item row at once.
    pub fn rows_mut(&mut self, i: usize, j: usize) -> (&mut [f64], &mut [f64]) {
        let k = self.k;
        (
            &mut self.users[i * k..(i + 1) * k],
            &mut self.items[j * k..(j + 1) * k],
        )
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.users
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.items
    }

    pub fn user_bias(&self) -> &[f64] {
        &self.user_bias
    }

    pub fn item_bias(&self) -> &[f64] {
        &self.item_bias
    }

    pub fn global_bias(&self) -> f64 {
        self.global_bias
    }

    pub fn set_global_bias(&mut self, b: f64) {
        self.global_bias = b;
    }

    pub(crate) fn biases_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.user_bias, &mut self.item_bias)
    }

    pub fn set_biases(&mut self, user_bias: Vec<f64>, item_bias: Vec<f64>, global: f64) -> Result<()> {
        if user_bias.len() != self.n_users || item_bias.len() != self.n_items {
            return Err(Error::InvalidArgument("bias vector sizes do not match".into()));
        }
        self.user_bias = user_bias;
        self.item_bias = item_bias;
        self.global_bias = global;
        self.bias_enabled = true;
        Ok(())
    }

    pub(crate) fn predict_unchecked(&self, i: usize, j: usize) -> f64 {
        let dot = dot(self.user(i), self.item(j));
        if self.bias_enabled {
            dot + self.user_bias[i] + self.item_bias[j] + self.global_bias
        } else {
            dot
        }
    }

    /// `<u_i, v_j>` plus biases when enabled. No clipping.
    pub fn predict(&self, i: usize, j: usize) -> Result<f64> {
        if i >= self.n_users {
            return Err(Error::IndexOutOfRange { kind: "user", index: i, len: self.n_users });
        }
        if j >= self.n_items {
            return Err(Error::IndexOutOfRange { kind: "item", index: j, len: self.n_items });
        }
        Ok(self.predict_unchecked(i, j))
    }

    /// `(|U|_F^2, |V|_F^2)`.
    pub fn frobenius_sq(&self) -> (f64, f64) {
        (
            self.users.iter().map(|x| x * x).sum(),
            self.items.iter().map(|x| x * x).sum(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.users
            .iter()
            .chain(&self.items)
            .chain(&self.user_bias)
            .chain(&self.item_bias)
            .all(|x| x.is_finite())
            && self.global_bias.is_finite()
    }

    fn check_shape(&self, ds: &RatingDataset) -> Result<()> {
        if ds.n_users() > self.n_users || ds.n_items() > self.n_items {
            return Err(Error::InvalidArgument(format!(
                "dataset is {}x{} but the model is {}x{}",
                ds.n_users(),
                ds.n_items(),
                self.n_users,
                self.n_items
            )));
        }
        Ok(())
    }

    /// `sum_i w_i sum_j (r_ij - pred_ij)^2 + lambda (|U|_F^2 + |V|_F^2)`;
    /// `weights = None` means every `w_i = 1`.
    pub fn objective(&self, ds: &RatingDataset, weights: Option<&[f64]>, lambda: f64) -> Result<f64> {
        self.check_shape(ds)?;
        if let Some(w) = weights {
            if w.len() < ds.n_users() {
                return Err(Error::InvalidArgument("fewer weights than users".into()));
            }
        }
        let mut loss = 0.0;
        for u in 0..ds.n_users() {
            let w = weights.map_or(1.0, |w| w[u]);
            let sse: f64 = ds
                .user_ratings(u)
                .iter()
                .map(|t| {
                    let e = t.rating as f64 - self.predict_unchecked(u, t.item as usize);
                    e * e
                })
                .sum();
            loss += w * sse;
        }
        let (nu, nv) = self.frobenius_sq();
        Ok(loss + lambda * (nu + nv))
    }

    /// Root mean squared error over `ds`, optionally clipping predictions.
    pub fn rmse(&self, ds: &RatingDataset, clip: Option<RatingRange>) -> Result<f64> {
        self.check_shape(ds)?;
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let sse: f64 = ds
            .triples()
            .iter()
            .map(|t| {
                let mut p = self.predict_unchecked(t.user as usize, t.item as usize);
                if let Some(r) = clip {
                    p = r.clamp(p);
                }
                let e = t.rating as f64 - p;
                e * e
            })
            .sum();
        Ok((sse / ds.len() as f64).sqrt())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Item factors without the user side: what a private release publishes.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFactors {
    pub k: usize,
    pub factors: Vec<f64>,
    /// Original item id per row.
    pub item_ids: Vec<u64>,
}

impl ItemFactors {
    pub fn from_model(m: &FactorModel, item_ids: &[u64]) -> Result<Self> {
        if item_ids.len() != m.n_items() {
            return Err(Error::InvalidArgument("item id map does not match the model".into()));
        }
        Ok(ItemFactors {
            k: m.k(),
            factors: m.item_factors().to_vec(),
            item_ids: item_ids.to_vec(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.factors[j * self.k..(j + 1) * self.k]
    }

    /// Row index of an original item id.
    pub fn position(&self, item_id: u64) -> Option<usize> {
        self.item_ids.iter().position(|&id| id == item_id)
    }
}

// Snapshot layout (little-endian):
//   magic "DPMFMDL\0", version u32 = 1, flags u32 (1 = biases, 2 = user section, 4 = item ids),
//   k u32, reserved u32, n_users u64, n_items u64, global_bias f32,
//   [U: n_users*k f32] [user bias: n_users f32]   when the user section is present
//   V: n_items*k f32, [item bias: n_items f32]
//   [item ids: n_items u64]
//   crc32 u32 over all preceding bytes
const SNAPSHOT_MAGIC: &[u8; 8] = b"DPMFMDL\0";
const SNAPSHOT_VERSION: u32 = 1;
const FLAG_BIASES: u32 = 1;
const FLAG_USERS: u32 = 2;
const FLAG_ITEM_IDS: u32 = 4;

struct SnapshotParts<'a> {
    k: usize,
    n_users: usize,
    n_items: usize,
    biases: bool,
    global_bias: f64,
    users: Option<(&'a [f64], &'a [f64])>,
    items: &'a [f64],
    item_bias: &'a [f64],
    item_ids: Option<&'a [u64]>,
}

fn encode_snapshot(p: &SnapshotParts) -> Vec<u8> {
    let mut buf = Vec::new();
    let put_f32s = |buf: &mut Vec<u8>, xs: &[f64]| {
        for &x in xs {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    let mut flags = 0;
    if p.biases {
        flags |= FLAG_BIASES;
    }
    if p.users.is_some() {
        flags |= FLAG_USERS;
    }
    if p.item_ids.is_some() {
        flags |= FLAG_ITEM_IDS;
    }
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&(p.k as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(p.n_users as u64).to_le_bytes());
    buf.extend_from_slice(&(p.n_items as u64).to_le_bytes());
    buf.extend_from_slice(&(p.global_bias as f32).to_le_bytes());
    if let Some((users, user_bias)) = p.users {
        put_f32s(&mut buf, users);
        if p.biases {
            put_f32s(&mut buf, user_bias);
        }
    }
    put_f32s(&mut buf, p.items);
    if p.biases {
        put_f32s(&mut buf, p.item_bias);
    }
    if let Some(ids) = p.item_ids {
        for &id in ids {
            buf.extend_from_slice(&id.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a full model snapshot (factors are stored as f32).
pub fn save_model(m: &FactorModel, item_ids: Option<&[u64]>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_snapshot(&SnapshotParts {
        k: m.k,
        n_users: m.n_users,
        n_items: m.n_items,
        biases: m.bias_enabled,
        global_bias: m.global_bias,
        users: Some((&m.users, &m.user_bias)),
        items: &m.items,
        item_bias: &m.item_bias,
        item_ids,
    });
    write_file(path.as_ref(), &bytes)
}

/// Writes item factors only, in the snapshot format with the user section omitted.
pub fn save_items(items: &ItemFactors, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_snapshot(&SnapshotParts {
        k: items.k,
        n_users: 0,
        n_items: items.n_items(),
        biases: false,
        global_bias: 0.0,
        users: None,
        items: &items.factors,
        item_bias: &[],
        item_ids: Some(&items.item_ids),
    });
    write_file(path.as_ref(), &bytes)
}

struct Decoded {
    model: FactorModel,
    has_users: bool,
    item_ids: Option<Vec<u64>>,
}

fn decode_snapshot(path: &Path) -> Result<Decoded> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |why: &str| Error::corrupt(path, why);
    if buf.len() < 48 {
        return Err(corrupt("truncated snapshot"));
    }
    let (body, trailer) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(corrupt("snapshot checksum mismatch"));
    }
    if &body[..8] != SNAPSHOT_MAGIC {
        return Err(corrupt("not a model snapshot"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    if u32_at(8) != SNAPSHOT_VERSION {
        return Err(corrupt("unsupported snapshot version"));
    }
    let flags = u32_at(12);
    let k = u32_at(16) as usize;
    let n_users = u64_at(24) as usize;
    let n_items = u64_at(32) as usize;
    let global_bias = f32::from_le_bytes(body[40..44].try_into().unwrap()) as f64;
    let biases = flags & FLAG_BIASES != 0;
    let has_users = flags & FLAG_USERS != 0;
    let has_ids = flags & FLAG_ITEM_IDS != 0;

    let mut expected = 44;
    if has_users {
        expected += 4 * n_users * k + if biases { 4 * n_users } else { 0 };
    }
    expected += 4 * n_items * k + if biases { 4 * n_items } else { 0 };
    if has_ids {
        expected += 8 * n_items;
    }
    if body.len() != expected {
        return Err(corrupt("snapshot length does not match its header"));
    }

    let mut pos = 44;
    let mut f32s = |n: usize| -> Vec<f64> {
        let out = body[pos..pos + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        pos += 4 * n;
        out
    };
    let mut model = FactorModel::zeros(n_users, n_items, k);
    if has_users {
        model.users = f32s(n_users * k);
        if biases {
            model.user_bias = f32s(n_users);
        }
    }
    model.items = f32s(n_items * k);
    if biases {
        model.item_bias = f32s(n_items);
    }
    model.global_bias = global_bias;
    model.bias_enabled = biases;
    let item_ids = has_ids.then(|| {
        body[pos..pos + 8 * n_items]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    });
    Ok(Decoded {
        model,
        has_users,
        item_ids,
    })
}

/// Reads a full snapshot; fails on an item-only file.
pub fn load_model(path: impl AsRef<Path>) -> Result<(FactorModel, Option<Vec<u64>>)> {
    let path = path.as_ref();
    let d = decode_snapshot(path)?;
    if !d.has_users {
        return Err(Error::corrupt(path, "snapshot has no user section"));
    }
    Ok((d.model, d.item_ids))
}

/// Reads the item side of any snapshot. Without stored ids, rows are numbered 0..n.
pub fn load_items(path: impl AsRef<Path>) -> Result<ItemFactors> {
    let d = decode_snapshot(path.as_ref())?;
    let n = d.model.n_items;
    Ok(ItemFactors {
        k: d.model.k,
        item_ids: d.item_ids.unwrap_or_else(|| (0..n as u64).collect()),
        factors: d.model.items,
    })
}
