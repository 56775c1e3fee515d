use std::path::PathBuf;

use dpmf::model::load_items;
use dpmf::recommend::evaluate_local;
use dpmf::seed;

use crate::config::Config;
use crate::input::SchemaArgs;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Released item factors (or any model snapshot).
    #[arg(long)]
    pub items: PathBuf,
    /// Ratings to split into each user's local training and test parts.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// Fraction of each user's ratings scored.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Ridge weight of the local fit [config: model.lambda; default 0.005].
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let lambda = args.lambda.unwrap_or(Config::load(args.config.as_deref())?.model.lambda);
    let v = load_items(&args.items)?;
    let ds = args.schema.load(&args.input)?;
    let (train, test) = ds.split(args.holdout, seed::substream(args.seed, seed::SPLIT))?;
    let eval = evaluate_local(&v, &train, &test, lambda)?;
    println!("{}", serde_json::to_string_pretty(&eval)?);
    Ok(())
}
