//! Operator surface: subcommands wiring config files to synthesis,
//! preprocessing, training, evaluation, robustness, attention analysis,
//! and latency benchmarking. Artifacts land in a run directory under the
//! output root (`--output-dir`, `REGUFORMER_OUT`, or the config value).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reguformer::error::Error;

use config::Overrides;

#[derive(Parser)]
#[command(name = "reguformer", version, about = "Sparse-attention well-log similarity models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic well bundle as a CSV.
    Synthesize {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Ingest + preprocess a CSV into an interval container.
    Preprocess {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train an encoder (and head) on the grouped split.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score held-out pairs with an existing model, or run grouped
    /// cross-validation when no model is given.
    Evaluate {
        #[command(flatten)]
        overrides: Overrides,
        /// Run directory holding model.bin/head.bin.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Corruption robustness curves for an existing model.
    Robustness {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        model: PathBuf,
    },
    /// Attention-gradient correlation and masking sweeps.
    AnalyzeAttention {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        model: PathBuf,
    },
    /// Wall-clock latency of the attention variants.
    Benchmark {
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Format(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Numerical(_)
        | Error::Domain(_)
        | Error::Shape { .. }
        | Error::Contract(_)
        | Error::Metric(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synthesize { overrides } => commands::cmd_synthesize(overrides),
        Command::Preprocess { overrides } => commands::cmd_preprocess(overrides),
        Command::Train { overrides } => commands::cmd_train(overrides),
        Command::Evaluate { overrides, model } => {
            commands::cmd_evaluate(overrides, model.as_deref())
        }
        Command::Robustness { overrides, model } => commands::cmd_robustness(overrides, model),
        Command::AnalyzeAttention { overrides, model } => {
            commands::cmd_analyze_attention(overrides, model)
        }
        Command::Benchmark { overrides } => commands::cmd_benchmark(overrides),
    };
    match outcome {
        Ok(_) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
