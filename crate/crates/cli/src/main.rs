use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use commands::{eval, ingest, pca, train};
use error::CliResult;

/// Chest X-ray classification pipeline: ingest, PCA analysis, training and
/// evaluation.
#[derive(Parser)]
#[command(name = "chestnet", version)]
struct Cli {
    /// JSON file of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse metadata, resize images and write patient-level splits.
    Ingest(ingest::IngestArgs),
    /// Per-channel variance curves and PCA-compressed containers.
    Pca(pca::PcaArgs),
    /// Train a model on an ingested dataset.
    Train(train::TrainArgs),
    /// Score a checkpoint on a manifest.
    Eval(eval::EvalArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => ingest::run(config::resolve(a, cfg)?),
        Command::Pca(a) => pca::run(config::resolve(a, cfg)?),
        Command::Train(a) => train::run(config::resolve(a, cfg)?),
        Command::Eval(a) => eval::run(config::resolve(a, cfg)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chestnet: error: {e}");
            ExitCode::from(e.code)
        }
    }
}
