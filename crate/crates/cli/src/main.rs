//! `dpmf`: preprocess ratings, train or privately release factor models,
//! and produce local recommendations.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence or
//! constraint retry limit.

mod bench;
mod config;
mod evaluate;
mod input;
mod preprocess;
mod recommend;
mod release;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "dpmf", version, about = "Differentially private matrix factorization")]
struct Cli {
    /// Log filter, e.g. `warn`, `info` or `dpmf=debug`.
    #[arg(long, global = true, default_value = "info")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest ratings, trim, reweight, compute the privacy budget and write the blocked layout.
    Preprocess(preprocess::Args),
    /// Train a model with SGD or draw a Langevin sample on preprocessed data.
    Train(train::Args),
    /// Sample under the privacy budget and publish item factors with a privacy report.
    DpRelease(release::Args),
    /// Fit one user locally against released item factors and rank items.
    Recommend(recommend::Args),
    /// Score released item factors by local fitting on a held-out split.
    Evaluate(evaluate::Args),
    /// Measure training throughput across dimensions, worker counts and layouts.
    Bench(bench::Args),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dpmf::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

/// The error chain joined by `: `, skipping causes the previous message
/// already ends with.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Preprocess(a) => preprocess::run(a),
        Command::Train(a) => train::run(a),
        Command::DpRelease(a) => release::run(a),
        Command::Recommend(a) => recommend::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Bench(a) => bench::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
