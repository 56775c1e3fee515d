use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use dpmf::dataset::{plan_tiers, write_blocks, BlockOptions, TierPlan};
use dpmf::preprocess::{prepare, BoundVariant, BudgetParams, BudgetReport};
use dpmf::seed;

use crate::config::Config;
use crate::input::{write_validation, SchemaArgs, BLOCKS_FILE, BUDGET_FILE, VALIDATION_FILE};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Ratings file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the blocks, the index and the budget report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Ratings kept per user [config: preprocess.tau; default 100].
    #[arg(long)]
    pub tau: Option<usize>,
    /// Prediction slack beyond the rating range [config: preprocess.kappa; default 1].
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Weight cap [config: preprocess.rho; default 1].
    #[arg(long)]
    pub rho: Option<f64>,
    /// Residual bound [config: preprocess.bound; default rating-range].
    #[arg(long, value_parser = parse_bound)]
    pub bound: Option<BoundVariant>,
    /// Privacy loss stored in the report [config: release.epsilon; default 4B].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Popularity tier cutoffs [config: preprocess.tiers; default 500,4500].
    #[arg(long, value_delimiter = ',')]
    pub tiers: Option<Vec<u32>>,
    /// Users per block [config: preprocess.users_per_block; default 1000].
    #[arg(long)]
    pub block_users: Option<usize>,
    /// Shuffle users before blocking [config: preprocess.shuffle_users].
    #[arg(long)]
    pub shuffle_users: bool,
    /// Fraction of each user's ratings held out for validation [config: preprocess.holdout; default 0].
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Root seed [config: seed; default 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_bound(s: &str) -> Result<BoundVariant, String> {
    match s {
        "rating-range" => Ok(BoundVariant::RatingRange),
        "five-star" => Ok(BoundVariant::FiveStar),
        "conservative" => Ok(BoundVariant::Conservative),
        _ => Err(format!("expected rating-range, five-star or conservative, got {s:?}")),
    }
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let cfg = Config::load(args.config.as_deref())?;
    let p = cfg.preprocess;
    let root = args.seed.or(cfg.seed).unwrap_or(0);
    let holdout = args.holdout.unwrap_or(p.holdout);
    let params = BudgetParams {
        tau: args.tau.unwrap_or(p.tau),
        kappa: args.kappa.unwrap_or(p.kappa),
        rho: args.rho.unwrap_or(p.rho),
        epsilon: args.epsilon.or(cfg.release.epsilon),
        variant: args.bound.unwrap_or(p.bound),
    };
    let opts = BlockOptions {
        users_per_block: args.block_users.unwrap_or(p.users_per_block),
        shuffle_seed: (args.shuffle_users || p.shuffle_users).then(|| seed::substream(root, seed::INGEST_SHUFFLE)),
    };

    let ds = args.schema.load(&args.input)?;
    let (train, validation) = if holdout > 0.0 {
        let (a, b) = ds.split(holdout, seed::substream(root, seed::SPLIT))?;
        (a, Some(b))
    } else {
        (ds, None)
    };
    let (trimmed, budget) = prepare(&train, &params, seed::substream(root, seed::TRIM))?;
    let cutoffs = TierPlan::clamp_cutoffs(&args.tiers.unwrap_or(p.tiers), trimmed.n_items());
    let plan = plan_tiers(&trimmed, &cutoffs)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let blocked = write_blocks(&trimmed, &plan, opts, args.out.join(BLOCKS_FILE))?;
    let report = BudgetReport::new(&budget, &blocked.meta().user_ids);
    let budget_path = args.out.join(BUDGET_FILE);
    fs::write(&budget_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", budget_path.display()))?;
    if let Some(v) = &validation {
        write_validation(v, &args.out.join(VALIDATION_FILE))?;
    }

    println!("ratings {} (trimmed from {}), users {}, items {}", trimmed.len(), train.len(), trimmed.n_users(), trimmed.n_items());
    println!("blocks {}", blocked.n_blocks());
    for (t, c) in plan.coverage().iter().enumerate() {
        println!("tier {t}: {} items, {:.1}% of ratings", tier_size(plan.tier_ends(), t), 100.0 * c);
    }
    println!("B = {}", budget.bound);
    println!("epsilon = {}", budget.epsilon);
    if let Some(v) = &validation {
        println!("validation ratings {}", v.len());
    }
    Ok(())
}

fn tier_size(ends: &[u32], t: usize) -> u32 {
    ends[t] - if t == 0 { 0 } else { ends[t - 1] }
}
