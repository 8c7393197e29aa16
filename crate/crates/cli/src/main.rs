//! `mobinet`: build daily mobility networks from trip records, fit and
//! train generative models, and evaluate how realistic their synthetic
//! networks are.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ConfigBuilder;

#[derive(Parser)]
#[command(
    name = "mobinet",
    version,
    about = "Daily mobility networks: ingestion, generative models, realism evaluation",
    after_help = "Config precedence: built-in defaults < --config file < --set/flags; \
                  the MOBINET_SEED environment variable overrides the root seed last."
)]
struct Cli {
    /// Config file (flat `key = value` lines with section prefixes).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set gan.epochs=800 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (config key out_dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Root seed (config key seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap for pairwise sweeps; 0 = all cores (config key threads).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse trip CSVs into daily networks and split them into train/test.
    Ingest {
        /// Trip CSV shard (.csv or .csv.gz); repeatable, adds to ingest.inputs.
        #[arg(long = "input", value_name = "FILE")]
        inputs: Vec<PathBuf>,
    },
    /// Fit gravity-model parameters on the training networks.
    FitGravity,
    /// Train the GAN on the training networks.
    TrainMogan,
    /// Generate synthetic networks for the reference days.
    Generate {
        /// gravity, radiation or mogan.
        #[arg(long)]
        model: String,
        /// Reference split providing day labels and marginals: train or test.
        #[arg(long, default_value = "test")]
        days: String,
        /// Networks to sample (mogan only; defaults to the reference count).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Score all network pairs and write the divergence report.
    Evaluate {
        /// Comma-separated model names; defaults to every directory under generated/.
        #[arg(long)]
        models: Option<String>,
    },
    /// Rebuild the report tables from persisted raw scores, without rescoring.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let mut builder = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        builder.load_file(path)?;
    }
    for pair in &cli.sets {
        let (key, value) = pair
            .split_once('=')
            .with_context(|| format!("--set {pair:?}: expected KEY=VALUE"))?;
        builder.set(key.trim(), value.trim())?;
    }
    if let Some(out) = &cli.out {
        builder.set("out_dir", &out.display().to_string())?;
    }
    if let Some(seed) = cli.seed {
        builder.set("seed", &seed.to_string())?;
    }
    if let Some(threads) = cli.threads {
        builder.set("threads", &threads.to_string())?;
    }
    let cfg = builder.finish()?;

    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the worker pool")?;
    }

    match &cli.command {
        Command::Ingest { inputs } => commands::cmd_ingest(&cfg, inputs).context("ingest"),
        Command::FitGravity => commands::cmd_fit_gravity(&cfg).context("fit-gravity"),
        Command::TrainMogan => commands::cmd_train_mogan(&cfg).context("train-mogan"),
        Command::Generate { model, days, count } => {
            commands::cmd_generate(&cfg, model, days, *count).context("generate")
        }
        Command::Evaluate { models } => {
            commands::cmd_evaluate(&cfg, models.as_deref()).context("evaluate")
        }
        Command::Report => commands::cmd_report(&cfg).context("report"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mobinet: {err:#}");
            ExitCode::FAILURE
        }
    }
}
