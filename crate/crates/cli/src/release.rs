use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use dpmf::model::save_items;
use dpmf::privacy::{release, ConstraintScope, ReleaseParams};
use dpmf::sgld::{langevin_step_size, write_trace};

use crate::config::{parse_constraint, Config};
use crate::input::open_prepared;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory written by `dpmf preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the released item factors and the privacy report.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Privacy loss [config: release.epsilon; default from preprocess].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Latent dimension [config: model.k; default 16].
    #[arg(long)]
    pub k: Option<usize>,
    /// Prior precision [config: model.lambda; default 0.005].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [config: sgld.epochs; default 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [config: sgld.workers; default 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sets eta0 to the Langevin step matching this plain SGD step on the data.
    #[arg(long, conflicts_with = "eta0")]
    pub sgd_eta0: Option<f64>,
    /// [config: sgld.eta0; default 1e-6]
    #[arg(long)]
    pub eta0: Option<f64>,
    /// [config: sgld.gamma; default 0]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// [config: sgld.zeta; default 1]
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Gaussian table size; 0 draws from the generator [config: sgld.table_size; default 100000].
    #[arg(long)]
    pub table_size: Option<usize>,
    /// Redraws allowed when a prediction leaves the allowed interval [config: release.retry_limit; default 10].
    #[arg(long)]
    pub retry_limit: Option<usize>,
    /// observed, exhaustive or sample:N [config: release.constraint; default sample:1000000].
    #[arg(long, value_parser = parse_constraint)]
    pub constraint: Option<ConstraintScope>,
    /// Root seed [config: seed; default 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let cfg = Config::load(args.config.as_deref())?;
    let data = open_prepared(&args.data)?;
    let root = args.seed.or(cfg.seed).unwrap_or(0);
    let epsilon = args.epsilon.or(cfg.release.epsilon).unwrap_or(data.budget.epsilon);
    let budget = data.budget.with_epsilon(epsilon)?;

    let mut sgld = cfg.sgld;
    sgld.epochs = args.epochs.unwrap_or(sgld.epochs);
    sgld.workers = args.workers.unwrap_or(sgld.workers);
    sgld.eta0 = args.eta0.unwrap_or(sgld.eta0);
    sgld.gamma = args.gamma.unwrap_or(sgld.gamma);
    sgld.zeta = args.zeta.unwrap_or(sgld.zeta);
    if let Some(size) = args.table_size {
        sgld.table_size = (size > 0).then_some(size);
    }
    if let Some(eta) = args.sgd_eta0 {
        sgld.eta0 = langevin_step_size(eta, budget.scale(), data.blocked.meta().n_triples);
    }
    sgld.seed = root;
    let params = ReleaseParams {
        k: args.k.unwrap_or(cfg.model.k),
        lambda: args.lambda.unwrap_or(cfg.model.lambda),
        init_scale: cfg.model.init_scale,
        retry_limit: args.retry_limit.unwrap_or(cfg.release.retry_limit),
        constraint: args.constraint.unwrap_or(cfg.release.constraint),
        sgld,
        seed: root,
    };

    let out = release(&data.blocked, &budget, &params)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_items(&out.released, args.out.join("items.bin"))?;
    let report_path = args.out.join("privacy_report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&out.report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    let trace_path = args.out.join("trace.csv");
    let f = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
    write_trace(&out.trace, BufWriter::new(f))?;

    let r = &out.report;
    println!("released {} item factors (k = {})", out.released.n_items(), out.released.k);
    println!("epsilon {} (B = {}), per rating {:.4}", r.epsilon, r.bound, r.rating_epsilon);
    println!("median user epsilon {:.4}", r.median_user_epsilon());
    println!("resamples {}; constraint checked on {}", r.retries, r.constraint);
    Ok(())
}
