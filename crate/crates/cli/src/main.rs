//! `emg2artic`: synthesize, preprocess, train, evaluate, ablate and report.

mod commands;
mod config;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "emg2artic", version, about = "Articulatory-feature prediction from surface EMG")]
pub struct Cli {
    /// Seed overriding the one in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config with `config_version: 1` and optional sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Redo work that already exists.
    #[arg(long, global = true)]
    pub force: bool,
    /// Concurrent training runs for `ablate`.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Remove,
    Useonly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CheckpointArg {
    Best,
    Final,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with known channel dependencies.
    Synth,
    /// Notch, high-pass, de-spike and resample every utterance.
    Preprocess {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the encoder on the train split, selecting on validation loss.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Write correlation reports for a trained run.
    Eval {
        /// Run directory written by `train`.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = CheckpointArg::Best)]
        checkpoint: CheckpointArg,
        /// Score the targets against themselves.
        #[arg(long)]
        oracle: bool,
    },
    /// Retrain per electrode condition and build drop-rate heatmaps.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        /// Electrode subset such as `2,4,6`; repeatable.
        #[arg(long)]
        subset: Vec<String>,
    },
    /// Render SVG figures and print a summary for a run, eval or sweep
    /// directory.
    Report {
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMG2ARTIC_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
