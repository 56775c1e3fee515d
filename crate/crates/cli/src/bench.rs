use std::path::PathBuf;

use clap::ValueEnum;
use dpmf::dataset::{build_blocks, plan_tiers, BlockOptions, RatingDataset, TierPlan, DEFAULT_TIER_CUTOFFS};
use dpmf::model::FactorModel;
use dpmf::sgd::{train, SgdConfig};
use dpmf::synth::power_law;

use crate::input::SchemaArgs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    /// Items renumbered by popularity and visited tier by tier.
    Tiered,
    /// Items in random order, one tier.
    Shuffled,
}

impl Layout {
    fn name(self) -> &'static str {
        match self {
            Layout::Tiered => "tiered",
            Layout::Shuffled => "shuffled",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Ratings file; without it a power-law synthetic dataset is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 64])]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize])]
    pub workers: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Layout::Tiered, Layout::Shuffled])]
    pub layout: Vec<Layout>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TIER_CUTOFFS)]
    pub tiers: Vec<u32>,
    #[arg(long, default_value_t = 1000)]
    pub block_users: usize,
    #[arg(long, default_value_t = 10_000)]
    pub synthetic_users: usize,
    #[arg(long, default_value_t = 17_770)]
    pub synthetic_items: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub synthetic_ratings: usize,
    #[arg(long, default_value_t = 0.75)]
    pub exponent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let ds: RatingDataset = match &args.input {
        Some(path) => args.schema.load(path)?,
        None => power_law(args.synthetic_users, args.synthetic_items, args.synthetic_ratings, args.exponent, args.seed)?,
    };
    let tiered = plan_tiers(&ds, &TierPlan::clamp_cutoffs(&args.tiers, ds.n_items()))?;
    for (t, c) in tiered.coverage().iter().enumerate() {
        let start = if t == 0 { 0 } else { tiered.tier_ends()[t - 1] };
        println!("# tier {t}: items {start}..{}, coverage {:.4}", tiered.tier_ends()[t], c);
    }
    println!("dim,workers,layout,ratings,seconds,ratings_per_sec");
    let opts = BlockOptions { users_per_block: args.block_users, shuffle_seed: None };
    for &layout in &args.layout {
        let plan = match layout {
            Layout::Tiered => tiered.clone(),
            Layout::Shuffled => TierPlan::shuffled(&ds, args.seed),
        };
        let data = build_blocks(&ds, &plan, opts)?;
        for &k in &args.dims {
            for &workers in &args.workers {
                let cfg = SgdConfig {
                    epochs: args.epochs,
                    workers,
                    eval_train: false,
                    seed: args.seed,
                    ..Default::default()
                };
                let m = FactorModel::init(ds.n_users(), ds.n_items(), k, 0.01, args.seed)?;
                let out = train(m, &data, &cfg, None)?;
                let ratings: u64 = out.log.iter().map(|r| r.ratings).sum();
                let seconds: f64 = out.log.iter().map(|r| r.seconds).sum();
                let rate = if seconds > 0.0 { ratings as f64 / seconds } else { 0.0 };
                println!("{k},{workers},{},{ratings},{seconds:.6},{rate:.1}", layout.name());
            }
        }
    }
    Ok(())
}
