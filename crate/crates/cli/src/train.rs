use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::Context;
use clap::ValueEnum;
use dpmf::model::{save_model, FactorModel, HyperParams};
use dpmf::sgd::{train, write_epoch_log, EpochRecord};
use dpmf::sgld::{langevin_step_size, sample, write_trace};

use crate::config::Config;
use crate::input::open_prepared;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Sgd,
    Sgld,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory written by `dpmf preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the model snapshot and the epoch log.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Solver::Sgd)]
    pub solver: Solver,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [config: sgd.epochs or sgld.epochs; default 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [config: sgd.workers or sgld.workers; default 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Root seed [config: seed; default 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Latent dimension [config: model.k; default 16].
    #[arg(long)]
    pub k: Option<usize>,
    /// Sgld only: sets eta0 to the Langevin step matching this plain SGD step.
    #[arg(long, conflicts_with = "eta0")]
    pub sgd_eta0: Option<f64>,
    /// Initial learning rate [config: sgd.eta0 (0.02) or sgld.eta0 (1e-6)].
    #[arg(long)]
    pub eta0: Option<f64>,
    /// Learning-rate decay exponent [config: sgd.gamma (1) or sgld.gamma (0)].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Ridge weight [config: sgd.lambda (0.005) or model.lambda (0.005) for sgld].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Noise temperature, sgld only [config: sgld.zeta; default 1].
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Privacy loss, sgld only [config: release.epsilon; default from preprocess].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Gaussian table size, sgld only; 0 draws from the generator [config: sgld.table_size; default 100000].
    #[arg(long)]
    pub table_size: Option<usize>,
    /// Bias terms, sgd only [config: model.biases].
    #[arg(long)]
    pub biases: bool,
    /// Initial factor scale [config: model.init_scale; default 0.01].
    #[arg(long)]
    pub init_scale: Option<f64>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let cfg = Config::load(args.config.as_deref())?;
    let data = open_prepared(&args.data)?;
    let meta = data.blocked.meta();
    let root = args.seed.or(cfg.seed).unwrap_or(0);
    let k = args.k.unwrap_or(cfg.model.k);
    let init_scale = args.init_scale.unwrap_or(cfg.model.init_scale);
    let init = FactorModel::init(meta.n_users, meta.n_items, k, init_scale, root)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let (model, log) = match args.solver {
        Solver::Sgd => {
            let mut c = cfg.sgd;
            c.epochs = args.epochs.unwrap_or(c.epochs);
            c.workers = args.workers.unwrap_or(c.workers);
            c.eta0 = args.eta0.unwrap_or(c.eta0);
            c.gamma = args.gamma.unwrap_or(c.gamma);
            c.lambda = args.lambda.unwrap_or(c.lambda);
            c.seed = root;
            let model = init.with_biases(args.biases || cfg.model.biases);
            let out = train(model, &data.blocked, &c, data.validation.as_ref())?;
            (out.model, out.log)
        }
        Solver::Sgld => {
            let mut c = cfg.sgld;
            c.epochs = args.epochs.unwrap_or(c.epochs);
            c.workers = args.workers.unwrap_or(c.workers);
            c.eta0 = args.eta0.unwrap_or(c.eta0);
            c.gamma = args.gamma.unwrap_or(c.gamma);
            c.zeta = args.zeta.unwrap_or(c.zeta);
            if let Some(size) = args.table_size {
                c.table_size = (size > 0).then_some(size);
            }
            c.seed = root;
            let epsilon = args.epsilon.or(cfg.release.epsilon).unwrap_or(data.budget.epsilon);
            let budget = data.budget.with_epsilon(epsilon)?;
            if let Some(eta) = args.sgd_eta0 {
                c.eta0 = langevin_step_size(eta, budget.scale(), meta.n_triples);
            }
            let hp = HyperParams::from_ridge(k, args.lambda.unwrap_or(cfg.model.lambda));
            let out = sample(init, &data.blocked, &budget, hp, &c, data.validation.as_ref())?;
            let trace_path = args.out.join("trace.csv");
            let f = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
            write_trace(&out.trace, BufWriter::new(f))?;
            let log = out
                .trace
                .iter()
                .map(|t| EpochRecord {
                    epoch: t.epoch,
                    eta: t.eta,
                    seconds: t.seconds,
                    ratings: t.ratings,
                    objective: Some(t.objective),
                    train_rmse: Some(t.train_rmse),
                    validation_rmse: t.validation_rmse,
                })
                .collect();
            (out.model, log)
        }
    };

    save_model(&model, Some(&meta.item_ids), args.out.join("model.bin"))?;
    let log_path = args.out.join("epoch_log.csv");
    let f = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    write_epoch_log(&log, BufWriter::new(f))?;
    if let Some(last) = log.last() {
        let rmse = last.validation_rmse.or(last.train_rmse);
        match rmse {
            Some(r) => println!("epoch {}: rmse {r:.4}, {:.0} ratings/s", last.epoch, last.throughput()),
            None => println!("epoch {}: {:.0} ratings/s", last.epoch, last.throughput()),
        }
    }
    println!("model written to {}", args.out.join("model.bin").display());
    Ok(())
}
