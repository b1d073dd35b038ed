//! `itryon`: generate synthetic data, train, sample, annotate and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "itryon",
    version,
    about = "Interaction-aware video try-on toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and its manifest.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        /// Deformation amplitude.
        #[arg(long)]
        amplitude: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the model on a generated dataset.
    Train {
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to start from.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        /// A-RoPE position scale.
        #[arg(long)]
        k: Option<usize>,
        /// 1: null action captions; 2: action captions.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample clips for every manifest entry.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset supplying guidance and scripts.
        #[arg(long)]
        data: PathBuf,
        /// Sampling steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg_scale: Option<f64>,
        /// Guidance interval as `lo:hi` fractions of the schedule.
        #[arg(long, value_parser = parse_interval)]
        cfg_interval: Option<[f64; 2]>,
        #[arg(long)]
        k: Option<usize>,
        /// 1 samples with null action captions.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: Option<u8>,
        /// Only the first `limit` manifest entries.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Label interactive frames, smooth them and write caption records.
    Annotate {
        #[arg(long)]
        data: PathBuf,
        /// Judge clips from this directory instead of the dataset clips.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// `oracle`, `scripted:PATH` or `http:URL`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        open_size: Option<usize>,
        #[arg(long)]
        close_size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted clips against a dataset.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Dataset directory or manifest file.
        #[arg(long, alias = "data")]
        manifest: PathBuf,
        #[arg(long)]
        provider: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of the training gradient on a small model.
    GradCheck {
        /// Probed entries per parameter tensor.
        #[arg(long, default_value_t = 8)]
        probes: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_interval(s: &str) -> Result<[f64; 2], String> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| format!("expected lo:hi, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok([num(lo)?, num(hi)?])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            n,
            amplitude,
            common,
        } => commands::gen_data(&common, n, amplitude),
        Command::Train {
            data,
            ckpt,
            steps,
            lambda,
            k,
            stage,
            common,
        } => commands::train(&common, &data, ckpt.as_deref(), steps, lambda, k, stage),
        Command::Sample {
            ckpt,
            data,
            steps,
            cfg_scale,
            cfg_interval,
            k,
            stage,
            limit,
            common,
        } => commands::sample(
            &common,
            &ckpt,
            &data,
            commands::SampleFlags {
                steps,
                cfg_scale,
                cfg_interval,
                k,
                stage,
                limit,
            },
        ),
        Command::Annotate {
            data,
            pred,
            provider,
            open_size,
            close_size,
            common,
        } => commands::annotate(
            &common,
            &data,
            pred.as_deref(),
            provider,
            open_size,
            close_size,
        ),
        Command::Eval {
            pred,
            manifest,
            provider,
            common,
        } => commands::eval(&common, &pred, &manifest, provider),
        Command::GradCheck {
            probes,
            lambda,
            k,
            common,
        } => commands::grad_check(&common, probes, lambda, k),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
