use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mocosa_cli::commands::{self, EvalPaths};
use mocosa_cli::config::{keys_help, RunConfig};
use mocosa_cli::{CliError, Result};
use mocosa_core::Split;

#[derive(Parser)]
#[command(name = "mocosa", about = "Text and structure knowledge graph completion", after_long_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value file; see `mocosa help train`)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory, overriding the config
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct Inference {
    #[command(flatten)]
    common: Common,
    /// Checkpoint file, overriding the config
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split to rank: train, valid or test (default from the config)
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a dataset's training split
    BuildVocab {
        /// Dataset directory
        #[arg(long)]
        dataset: PathBuf,
        /// Vocabulary file to write
        #[arg(long)]
        out: PathBuf,
        /// Drop words seen fewer times than this
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
    },
    /// Train a model and write its checkpoint
    #[command(after_long_help = keys_help())]
    Train {
        #[command(flatten)]
        common: Common,
        /// Seed overriding the config's `seed`
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path overriding the config
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank a split with a trained checkpoint
    Eval {
        #[command(flatten)]
        inference: Inference,
        /// Write the summary table here as well as to stdout
        #[arg(long)]
        report: Option<PathBuf>,
        /// Per-query details file
        #[arg(long)]
        details: Option<PathBuf>,
    },
    /// Select the re-ranking penalty per neighbour regime
    RerankSweep {
        #[command(flatten)]
        inference: Inference,
    },
    /// Train/test tail-set overlap of a dataset
    Miou {
        /// Dataset directory
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Write top-10 predictions for every query of a split
    ExportPredictions {
        #[command(flatten)]
        inference: Inference,
        /// Predictions file to write
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn parse_split(s: Option<&str>, default: Split) -> Result<Split> {
    match s {
        None => Ok(default),
        Some("train") => Ok(Split::Train),
        Some("valid") => Ok(Split::Valid),
        Some("test") => Ok(Split::Test),
        Some(other) => Err(CliError::Config(format!("unknown split {other:?}"))),
    }
}

fn inference(i: &Inference) -> Result<(RunConfig, commands::Loaded, Split)> {
    let cfg = load_config(i.common.config.as_deref())?;
    let split = parse_split(i.split.as_deref(), cfg.eval_split)?;
    let loaded = commands::load_for_inference(
        &cfg,
        i.common.dataset.as_deref(),
        i.checkpoint.as_deref(),
        i.common.config.is_some(),
    )?;
    Ok((cfg, loaded, split))
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::BuildVocab { dataset, out, min_freq } => commands::build_vocab(&dataset, min_freq, &out),
        Command::Train {
            common,
            seed,
            checkpoint,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = checkpoint {
                cfg.checkpoint = c;
            }
            Ok(commands::train(&cfg, common.dataset.as_deref())?.render())
        }
        Command::Eval {
            inference: i,
            report,
            details,
        } => {
            let (cfg, loaded, split) = inference(&i)?;
            let paths = EvalPaths {
                summary: report.as_deref(),
                details: details.as_deref(),
            };
            commands::eval(&cfg, &loaded, split, paths)
        }
        Command::RerankSweep { inference: i } => {
            let (cfg, loaded, split) = inference(&i)?;
            commands::rerank_sweep_cmd(&cfg, &loaded, split)
        }
        Command::Miou { dataset } => commands::miou_cmd(&dataset),
        Command::ExportPredictions { inference: i, out } => {
            let (cfg, loaded, split) = inference(&i)?;
            commands::export_predictions(&cfg, &loaded, split, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("mocosa-error\t{}\t{msg}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
