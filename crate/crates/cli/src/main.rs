//! `goldstd`: continuous-arousal gold-standard pipeline CLI.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "goldstd",
    version,
    about = "Rater fusion, physiologically-adapted gold standards, and LSTM evaluation"
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (also seeds synthesis and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (required by every subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (raters, physiology, features, latent).
    Synth {
        /// Number of subjects to synthesize.
        #[arg(long)]
        subjects: Option<usize>,
        /// Session duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Build RAAW gold standards for one or more channel combinations.
    Fuse {
        /// Dataset root containing partitions.csv and subject directories.
        #[arg(long)]
        data: PathBuf,
        /// Combination tag(s), comma-separated, or "all".
        #[arg(long, default_value = "all")]
        combo: String,
    },
    /// Mean pairwise inter-rater correlation per combination.
    Agreement {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "all")]
        combo: String,
    },
    /// Mean cross-subject correlation matrix over all channels.
    Corr {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distribution statistics (MAC, skewness) of fused gold standards.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "all")]
        combo: String,
    },
    /// Grid-search an LSTM regressor against one combination's gold.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        combo: String,
        /// Feature set name; defaults to the first available set.
        #[arg(long)]
        features: Option<String>,
    },
    /// Evaluate a trained model on every partition.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Decision-level fusion of two or more trained models.
    Latefuse {
        #[arg(long)]
        data: PathBuf,
        /// Trained model files (repeat the flag; at least two).
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Fusion target combination; defaults to the first model's.
        #[arg(long)]
        combo: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply_flags(cli.seed, cli.jobs);
    if let Some(jobs) = config.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .ok();
    }
    let out = cli.out.as_deref().expect("checked in main");
    match &cli.command {
        Command::Synth { subjects, duration } => {
            commands::cmd_synth(&config, *subjects, *duration, out)
        }
        Command::Fuse { data, combo } => commands::cmd_fuse(&config, data, combo, out),
        Command::Agreement { data, combo } => commands::cmd_agreement(&config, data, combo, out),
        Command::Corr { data } => commands::cmd_corr(&config, data, out),
        Command::Stats { data, combo } => commands::cmd_stats(&config, data, combo, out),
        Command::Train {
            data,
            combo,
            features,
        } => commands::cmd_train(&config, data, combo, features.as_deref(), out),
        Command::Eval { model, data } => commands::cmd_eval(&config, model, data, out),
        Command::Latefuse {
            data,
            models,
            combo,
        } => commands::cmd_latefuse(&config, data, models, combo.as_deref(), out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.out.is_none() {
        eprintln!("error: --out <DIR> is required");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
