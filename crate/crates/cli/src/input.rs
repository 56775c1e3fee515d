//! Shared input handling: rating file schemas and the preprocessed directory.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use clap::ValueEnum;
use dpmf::dataset::{ingest_path, BlockedDataset, InputFormat, RatingDataset, RatingRange, RatingTriple, Schema};
use dpmf::preprocess::{BudgetReport, PrivacyBudget};

pub const BLOCKS_FILE: &str = "ratings.blk";
pub const BUDGET_FILE: &str = "budget.json";
pub const VALIDATION_FILE: &str = "validation.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// `user,item,rating` per line.
    Delimited,
    /// Netflix prize per-movie file.
    Netflix,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SchemaArgs {
    #[arg(long, value_enum, default_value_t = Format::Delimited)]
    pub format: Format,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Skip the first line of the file.
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long, default_value_t = 0)]
    pub user_col: usize,
    #[arg(long, default_value_t = 1)]
    pub item_col: usize,
    #[arg(long, default_value_t = 2)]
    pub rating_col: usize,
    #[arg(long, default_value_t = 1.0)]
    pub rating_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub rating_max: f64,
}

impl SchemaArgs {
    pub fn schema(&self) -> anyhow::Result<Schema> {
        Ok(Schema {
            format: match self.format {
                Format::Delimited => InputFormat::Delimited,
                Format::Netflix => InputFormat::NetflixPerMovie,
            },
            delimiter: self.delimiter,
            user_col: self.user_col,
            item_col: self.item_col,
            rating_col: self.rating_col,
            skip_header: self.skip_header,
            range: RatingRange::new(self.rating_min, self.rating_max)?,
        })
    }

    pub fn load(&self, path: &Path) -> anyhow::Result<RatingDataset> {
        let ds = ingest_path(path, &self.schema()?)?;
        log::info!("read {} ratings from {} users on {} items", ds.len(), ds.n_users(), ds.n_items());
        Ok(ds)
    }
}

/// The output of `dpmf preprocess`.
pub struct Prepared {
    pub blocked: BlockedDataset,
    pub budget: PrivacyBudget,
    pub validation: Option<RatingDataset>,
}

pub fn open_prepared(dir: &Path) -> anyhow::Result<Prepared> {
    let blocked = BlockedDataset::open(dir.join(BLOCKS_FILE))?;
    let budget_path = dir.join(BUDGET_FILE);
    let text = fs::read_to_string(&budget_path).with_context(|| format!("reading {}", budget_path.display()))?;
    let report: BudgetReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", budget_path.display()))?;
    let meta = blocked.meta();
    if report.users.iter().map(|u| u.user).ne(meta.user_ids.iter().copied()) {
        bail!("{} does not describe the users of {}", budget_path.display(), BLOCKS_FILE);
    }
    let validation_path = dir.join(VALIDATION_FILE);
    let validation = validation_path.exists().then(|| read_validation(&validation_path, &blocked)).transpose()?;
    Ok(Prepared { budget: report.to_budget(), blocked, validation })
}

/// Writes held-out ratings with original ids.
pub fn write_validation(ds: &RatingDataset, path: &Path) -> anyhow::Result<()> {
    let mut out = Vec::new();
    for t in ds.triples() {
        writeln!(out, "{},{},{}", ds.user_ids()[t.user as usize], ds.item_ids()[t.item as usize], t.rating)?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Reads held-out ratings into the blocked dataset's user and item indices.
/// Ratings of users or items unknown to the blocks are dropped.
fn read_validation(path: &Path, blocked: &BlockedDataset) -> anyhow::Result<RatingDataset> {
    let meta = blocked.meta();
    let users: HashMap<u64, u32> = meta.user_ids.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect();
    let items: HashMap<u64, u32> = meta.item_ids.iter().enumerate().map(|(j, &id)| (id, j as u32)).collect();
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut triples = Vec::new();
    let mut dropped = 0usize;
    for (n, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        let [u, i, r] = parts[..] else {
            bail!("{}:{}: expected user,item,rating", path.display(), n + 1);
        };
        let (u, i, r): (u64, u64, f32) = (u.parse()?, i.parse()?, r.parse()?);
        match (users.get(&u), items.get(&i)) {
            (Some(&u), Some(&i)) => triples.push(RatingTriple::new(u, i, r)),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} validation ratings refer to users or items absent from training");
    }
    Ok(RatingDataset::from_triples(triples, meta.n_users, meta.n_items, meta.range)?)
}

/// Reads `item,rating` lines (blank lines and `#` comments allowed).
pub fn read_user_ratings(path: &Path) -> anyhow::Result<Vec<(u64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(i, r)| Some((i.trim().parse().ok()?, r.trim().parse().ok()?)));
        match parsed {
            Some(p) => out.push(p),
            None => bail!("{}:{}: expected item,rating", path.display(), n + 1),
        }
    }
    Ok(out)
}
