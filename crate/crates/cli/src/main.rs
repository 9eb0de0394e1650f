//! `sdgnn`: train, evaluate and inspect the spoiler detector.
//!
//! Machine-readable output goes to stdout as JSON; progress and warnings go
//! to stderr. Exit status is 0 on success, 1 on a runtime failure and 2 on a
//! usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{usage, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "sdgnn", version, about = "Spoiler sentence detection with a dependency-relation-aware graph network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// key=value configuration file; flags override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output location (directory for train, file otherwise)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override any configuration key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes best.ckpt, final.ckpt and train_log.jsonl
    Train {
        #[command(flatten)]
        common: Common,
        /// Training records (JSON lines)
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        /// Validation records used for model selection
        #[arg(long, value_name = "FILE")]
        val: Option<PathBuf>,
        /// Pretrained word vectors, one word and its values per line
        #[arg(long, value_name = "FILE")]
        vectors: Option<PathBuf>,
    },
    /// Print AUROC, precision, recall and F1 of a checkpoint on a labelled set
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Print one {id, y_hat} line per record
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Dump attention weights, pooling weights and the prediction for one record
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
        /// Record id
        #[arg(long)]
        id: String,
    },
    /// Corpus statistics of a dataset (JSON lines or .conllu)
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        data: Option<PathBuf>,
    },
    /// Write the synthetic twin-pair corpus as JSON lines
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of records
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for pair in &common.set {
        cfg.apply_pair(pair).map_err(usage)?;
    }
    let common_flags = [("seed", common.seed.map(|s| s.to_string())), ("out", path_flag(&common.out))];
    for (key, value) in common_flags.iter().chain(flags) {
        if let Some(v) = value {
            cfg.set(key, v).map_err(|e| usage(format!("--{key}: {e}")))?;
        }
    }
    Ok(cfg)
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { common, train, val, vectors } => {
            let flags = [("train", path_flag(&train)), ("val", path_flag(&val)), ("vectors", path_flag(&vectors))];
            commands::train(&resolve(&common, &flags)?)
        }
        Command::Eval { common, checkpoint, data, threshold } => {
            let flags = [
                ("checkpoint", path_flag(&checkpoint)),
                ("data", path_flag(&data)),
                ("threshold", threshold.map(|t| t.to_string())),
            ];
            commands::eval(&resolve(&common, &flags)?)
        }
        Command::Predict { common, checkpoint, data } => {
            let flags = [("checkpoint", path_flag(&checkpoint)), ("data", path_flag(&data))];
            commands::predict(&resolve(&common, &flags)?)
        }
        Command::Inspect { common, checkpoint, data, id } => {
            let flags = [("checkpoint", path_flag(&checkpoint)), ("data", path_flag(&data))];
            commands::inspect(&resolve(&common, &flags)?, &id)
        }
        Command::Stats { common, data } => commands::stats(&resolve(&common, &[("data", path_flag(&data))])?),
        Command::Synth { common, n } => commands::synth(&resolve(&common, &[])?, n),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.downcast_ref::<UsageError>().is_some()
        || matches!(err.downcast_ref::<sdgnn::Error>(), Some(sdgnn::Error::Config(_)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed downstream pipe (`sdgnn predict | head`) is not a failure
        Err(err)
            if err.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
