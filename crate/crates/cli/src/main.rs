//! `ducknet`: dataset splitting, training, evaluation, prediction, ablation
//! and self-checks.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 usage,
//! configuration, data or checkpoint error, 3 numerical failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "ducknet", version, about = "DUCK-Net polyp segmentation")]
struct Cli {
    /// Flat key=value file supplying option defaults; flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded 80/10/10 train/val/test manifest for a dataset.
    Split(SplitArgs),
    /// Train a network on the train section of a split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one section of a split.
    Eval(EvalArgs),
    /// Predict the mask of one image.
    Predict(PredictArgs),
    /// Run a self-check suite.
    Verify(VerifyArgs),
    /// Train DUCK and simple-block networks and compare them on the test section.
    Ablation(AblationArgs),
    /// Write a synthetic ellipse dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Network and optimisation hyper-parameters shared by `train` and `ablation`.
#[derive(Debug, Clone, Args)]
struct HyperArgs {
    /// Base filter count F.
    #[arg(long)]
    filters: Option<usize>,
    /// Number of downsampling levels.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Square input side; samples are resized to it.
    #[arg(long)]
    size: Option<usize>,
    /// Re-augment the training set every epoch.
    #[arg(long)]
    augment: Option<bool>,
    /// Foreground threshold for validation Dice.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    aug: AugmentArgs,
}

/// Augmentation ranges.
#[derive(Debug, Clone, Args)]
struct AugmentArgs {
    #[arg(long, hide_short_help = true)]
    flip_h_prob: Option<f64>,
    #[arg(long, hide_short_help = true)]
    flip_v_prob: Option<f64>,
    #[arg(long, hide_short_help = true)]
    brightness_min: Option<f64>,
    #[arg(long, hide_short_help = true)]
    brightness_max: Option<f64>,
    #[arg(long, hide_short_help = true)]
    contrast: Option<f64>,
    #[arg(long, hide_short_help = true)]
    saturation: Option<f64>,
    #[arg(long, hide_short_help = true)]
    hue: Option<f64>,
    #[arg(long, hide_short_help = true)]
    rotation_min: Option<f64>,
    #[arg(long, hide_short_help = true)]
    rotation_max: Option<f64>,
    #[arg(long, hide_short_help = true)]
    translate_min: Option<f64>,
    #[arg(long, hide_short_help = true)]
    translate_max: Option<f64>,
    #[arg(long, hide_short_help = true)]
    scale_min: Option<f64>,
    #[arg(long, hide_short_help = true)]
    scale_max: Option<f64>,
    #[arg(long, hide_short_help = true)]
    shear_min: Option<f64>,
    #[arg(long, hide_short_help = true)]
    shear_max: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// `duck` or `simple`.
    #[arg(long)]
    block: Option<String>,
    /// Best checkpoint; the final one goes to CKPT.last.
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Loss history file (default CKPT.history).
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// `test`, `val` or `train`.
    #[arg(long)]
    section: Option<String>,
    /// Per-image metrics table.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,
    /// Also write the per-image metrics as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    image: PathBuf,
    /// Binary mask (0/255) at the image's size.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Side-by-side image | ground truth | prediction panel.
    #[arg(long, value_name = "FILE")]
    panel: Option<PathBuf>,
    /// Ground-truth mask for the panel.
    #[arg(long, value_name = "FILE", requires = "panel")]
    gt: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// gradcheck, rf, metrics or conv-oracle.
    #[arg(long)]
    suite: ducknet::verify::Suite,
}

#[derive(Debug, Args)]
struct AblationArgs {
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long, value_name = "FILE")]
    split: PathBuf,
    /// Comparison table of the two block kinds.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", commands::describe(&err));
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
