//! `sfdqn` command-line driver.

mod commands;
mod config;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfdqn_core::Error;

#[derive(Parser)]
#[command(name = "sfdqn", version, about = "Offline DQN surface following on a simulated tactile sensor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a transition dataset with the randomized behavior policy.
    GenData(GenDataArgs),
    /// Train a Q-network offline on a dataset.
    Train(TrainArgs),
    /// Score every checkpoint of a training run on the held-out test set.
    Eval(EvalArgs),
    /// Run a closed-loop surface-following episode.
    Rollout(RolloutArgs),
    /// Summarize a dataset.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Environment and behavior-policy seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_units: Option<usize>,
    /// Lateral surface drift per step (m).
    #[arg(long)]
    pub drift: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset file written by `gen-data`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sidecar of the dataset; defaults to `dataset.json` beside it.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of weight initialization and unit sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = ["shallow", "deep"])]
    pub arch: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of `.sfck` checkpoints.
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Test dataset; defaults to `test.sfds` in the run directory.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Dataset sidecar; defaults to `dataset.json` in the run directory.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RolloutArgs {
    /// Checkpoint whose greedy policy drives the arm.
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Drive with the look-ahead oracle instead of a network.
    #[arg(long, conflicts_with = "checkpoint")]
    pub oracle: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Measured steps after warm-up.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub drift: Option<f64>,
    /// Environment seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dump every k-th frame as PGM (0 disables).
    #[arg(long)]
    pub dump_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sidecar; defaults to `dataset.json` beside the dataset if present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

/// Exit status for a failed command, chosen by the first library error in
/// the chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(core) = err.chain().find_map(|e| e.downcast_ref::<Error>()) else {
        return 1;
    };
    match core {
        Error::Config(_) => 2,
        Error::Format { .. } | Error::Corrupt | Error::ArchMismatch(_) | Error::EmptyDataset => 3,
        Error::NumericFault { .. } => 4,
        Error::TrainingAborted { cause, .. } if matches!(**cause, Error::NumericFault { .. }) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Rollout(a) => commands::rollout(&a),
        Command::Inspect(a) => commands::inspect(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
