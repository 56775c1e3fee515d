use std::collections::HashSet;
use std::path::PathBuf;

use dpmf::model::load_items;
use dpmf::recommend::{local_fit, recommend_top_n};

use crate::config::Config;
use crate::input::read_user_ratings;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Released item factors (or any model snapshot).
    #[arg(long)]
    pub items: PathBuf,
    /// The user's own ratings as `item,rating` lines.
    #[arg(long)]
    pub ratings: PathBuf,
    /// Ridge weight of the local fit [config: model.lambda; default 0.005].
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Also rank items the user has already rated.
    #[arg(long)]
    pub include_rated: bool,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let lambda = args.lambda.unwrap_or(Config::load(args.config.as_deref())?.model.lambda);
    let v = load_items(&args.items)?;
    let mut own = Vec::new();
    let mut unknown = 0usize;
    for (item, rating) in read_user_ratings(&args.ratings)? {
        match v.position(item) {
            Some(j) => own.push((j, rating)),
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        log::warn!("{unknown} rated items are not in the released factors and were ignored");
    }
    let u = local_fit(&v, &own, lambda)?;
    let exclude: HashSet<usize> = if args.include_rated { HashSet::new() } else { own.iter().map(|p| p.0).collect() };
    println!("item,score");
    for r in recommend_top_n(&u, &v, &exclude, args.top) {
        println!("{},{:.6}", r.item, r.score);
    }
    Ok(())
}
