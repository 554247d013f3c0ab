//! `tinynas`: search, estimate and evaluate MCU-sized networks.
//!
//! Exit codes: 0 success, 1 domain error (infeasible budget, bad config,
//! missing inputs), 2 usage error. Diagnostics go to stderr; results go to
//! files and stdout as JSON.

mod commands;
mod config;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "tinynas", version, about = "Differentiable architecture search under MCU resource budgets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DataKind {
    Spectrogram,
    Anomaly,
    Measurements,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset or measurement CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Classes (spectrogram) before per-class counts apply.
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Machine IDs (anomaly).
        #[arg(long, default_value_t = 4)]
        machine_ids: usize,
        #[arg(long, default_value_t = 40)]
        samples_per_class: usize,
        /// Feature shape (spectrogram), e.g. 12x10x1.
        #[arg(long, default_value = "12x10x1")]
        shape: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-(backbone, MCU) latency/power models from a measurement CSV.
    Calibrate {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the differentiable search under a resource budget.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// Device profile (builtin name or profile JSON path) supplying
        /// flash/SRAM limits.
        #[arg(long)]
        mcu: Option<String>,
        #[arg(long)]
        budget_sram: Option<u64>,
        #[arg(long)]
        budget_flash: Option<u64>,
        #[arg(long)]
        budget_ops: Option<u64>,
        /// Deployment bit-width for resource accounting.
        #[arg(long, value_parser = clap::value_parser!(u8))]
        bits: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run this many independent seeds concurrently.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resource report (and optional latency/energy) for an architecture.
    Estimate {
        /// Architecture document path, or a bundled name
        /// (kws_s|kws_m|kws_l|ad_s|ad_m|ad_l).
        #[arg(long)]
        arch: String,
        /// Device profile (builtin name or profile JSON path).
        #[arg(long)]
        mcu: Option<String>,
        #[arg(long, value_parser = clap::value_parser!(u8), default_value_t = 8)]
        bits: u8,
        /// Fitted latency/power model JSON from `calibrate`.
        #[arg(long)]
        hw_model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an architecture on the configured task and report accuracy.
    TrainEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        arch: String,
        /// Override the finetune quantization width (0 disables).
        #[arg(long, value_parser = clap::value_parser!(u8))]
        bits: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a machine-ID classifier and score the anomaly test split.
    AdEval {
        #[arg(long)]
        config: PathBuf,
        /// Classifier architecture document (a compact default otherwise).
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scores CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    // clap exits with 2 on usage errors and 0 for help/version
    let cli = Cli::parse();
    let started = Instant::now();
    let argv: Vec<String> = std::env::args().collect();
    let outcome = match cli.command {
        Command::GenData { kind, seed, classes, machine_ids, samples_per_class, shape, out } => {
            commands::gen_data(kind, seed, classes, machine_ids, samples_per_class, &shape, &out)
                .map(|outputs| (outputs, Some(seed)))
        }
        Command::Calibrate { csv, out } => {
            commands::calibrate(&csv, &out).map(|outputs| (outputs, None))
        }
        Command::Search {
            config,
            mcu,
            budget_sram,
            budget_flash,
            budget_ops,
            bits,
            seed,
            seeds,
            out,
        } => commands::search(
            &config,
            mcu.as_deref(),
            budget_sram,
            budget_flash,
            budget_ops,
            bits,
            seed,
            seeds,
            &out,
        )
        .map(|outputs| (outputs, seed)),
        Command::Estimate { arch, mcu, bits, hw_model, out } => {
            commands::estimate(&arch, mcu.as_deref(), bits, hw_model.as_deref(), out.as_deref())
                .map(|outputs| (outputs, None))
        }
        Command::TrainEval { config, arch, bits, seed, out } => {
            commands::train_eval(&config, &arch, bits, seed, out.as_deref())
                .map(|outputs| (outputs, seed))
        }
        Command::AdEval { config, arch, seed, out } => {
            commands::ad_eval(&config, arch.as_deref(), seed, &out).map(|outputs| (outputs, seed))
        }
    };

    match outcome {
        Ok((outputs, seed)) => {
            if let Err(e) = manifest::write_for_outputs(&argv, seed, &outputs, started.elapsed()) {
                eprintln!("error: could not write run manifest: {e:#}");
                std::process::exit(1);
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
