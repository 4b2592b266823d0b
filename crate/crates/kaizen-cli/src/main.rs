//! `kaizen` — semi-supervised sequence-training experiments with an EMA
//! teacher on synthetic data.

mod commands;
mod config;
mod pipeline;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::TrainStatus;

const EXIT_HELP: &str = "Exit codes:
  0  success
  2  config error (bad file, bad field, incompatible checkpoint)
  3  training collapsed (blank ratio exceeded the threshold; metrics retained)
  4  numeric failure (NaN loss/parameters or binary16 overflow)
  1  other errors (I/O, ...)";

#[derive(Parser)]
#[command(
    name = "kaizen",
    version,
    about = "Semi-supervised sequence training with an EMA teacher",
    after_help = EXIT_HELP
)]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Parallel runs for `sweep`.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Continue a run from its checkpoint.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the four dataset splits plus a manifest from a corpus config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: current directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train: seed model, burn-in + continuous pseudo-labeling, fine-tune.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (default: config `output_dir`, then `runs/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an (alpha, delta, precision, cache) x seeds grid and summarize.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Evaluate a model checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write a per-utterance CSV.
        #[arg(long)]
        per_utterance: Option<PathBuf>,
    },
    /// Render dev-WER learning curves from run directories into an SVG.
    Plot {
        #[arg(long)]
        out: PathBuf,
        /// Run directories containing metrics.csv and resolved_config.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<kaizen::Error>() {
        return match e {
            kaizen::Error::Collapse { .. } => 3,
            kaizen::Error::NumericFailure { .. }
            | kaizen::Error::Binary16Overflow { .. }
            | kaizen::Error::NonFinite { .. }
            | kaizen::Error::NonFiniteValue { .. } => 4,
            kaizen::Error::InvalidConfig(_)
            | kaizen::Error::DatasetParse { .. }
            | kaizen::Error::Checkpoint(_)
            | kaizen::Error::LayoutMismatch(_)
            | kaizen::Error::InfeasibleUtterances { .. } => 2,
            _ => 1,
        };
    }
    if err.downcast_ref::<serde_json::Error>().is_some() {
        return 2;
    }
    // anyhow contexts wrapping config parse failures.
    if err.chain().any(|c| c.downcast_ref::<serde_json::Error>().is_some()) {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: anyhow::Result<ExitCode> = match &cli.command {
        Command::Generate { config, out } => commands::cmd_generate(
            config,
            out.as_deref(),
            cli.force,
            cli.seed_override,
        )
        .map(|()| ExitCode::SUCCESS),
        Command::Train { config, out } => commands::cmd_train(
            config,
            out.as_deref(),
            cli.force,
            cli.resume,
            cli.seed_override,
        )
        .map(|status| match status {
            TrainStatus::Completed => ExitCode::SUCCESS,
            TrainStatus::Collapsed => ExitCode::from(3),
        }),
        Command::Sweep { spec } => {
            commands::cmd_sweep(spec, cli.jobs, cli.force).map(|()| ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            data,
            per_utterance,
        } => commands::cmd_eval(checkpoint, data, per_utterance.as_deref())
            .map(|()| ExitCode::SUCCESS),
        Command::Plot { out, runs } => {
            commands::cmd_plot(runs, out).map(|()| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
