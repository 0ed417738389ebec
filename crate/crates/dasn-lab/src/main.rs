use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dasn_lab::cli;
use dasn_lab::config::RunConfig;

#[derive(Parser)]
#[command(name = "dasn-lab", about = "Deterministic suppression-training laboratory")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Path to the JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set train.lr=1e-3 (repeatable, applied in order).
    #[arg(long = "set")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> dasn_lab::Result<RunConfig> {
        RunConfig::load(&self.config, &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic four-domain benchmark suite.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on the configured leave-one-domain-out task.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the saved training state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the held-out domain.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare factor leakage between two checkpoints with linear probes.
    Probe {
        #[command(flatten)]
        common: Common,
    },
    /// Build an ablation table from labeled checkpoints.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn run(args: Args) -> dasn_lab::Result<()> {
    match args.command {
        Command::GenData { common } => cli::cmd_gen_data(&common.load()?),
        Command::Train { common, resume } => cli::cmd_train(&common.load()?, resume),
        Command::Eval { common, checkpoint } => cli::cmd_eval(&common.load()?, &checkpoint),
        Command::Probe { common } => cli::cmd_probe(&common.load()?),
        Command::Report { common } => cli::cmd_report(&common.load()?),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
