//! `omama` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 internal error.

mod commands;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "omama", version, about = "Cross-view object mask matching")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic training and evaluation packs with known ground truth.
    GenSynthetic(GenArgs),
    /// Train a matcher on the packs of a manifest.
    Train(TrainArgs),
    /// Match one pack with a trained checkpoint.
    Match(MatchArgs),
    /// Evaluate a checkpoint on the packs of a manifest.
    Eval(EvalArgs),
    /// Validate a pack and print its header.
    InspectPack(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training packs.
    #[arg(long, default_value_t = 400)]
    pub packs: usize,
    /// Evaluation packs, written under `<out>/eval`.
    #[arg(long, default_value_t = 100)]
    pub eval_packs: usize,
    #[arg(long, default_value_t = 8)]
    pub objects: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub distractor_parts: usize,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 0.0)]
    pub invisible_prob: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML or JSON run config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub pack: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Visibility threshold; defaults to the checkpoint's `eval.vis_threshold`.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Write a binary PGM with the source mask and the chosen mask.
    #[arg(long)]
    pub emit_overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, conflicts_with = "sweep_threshold")]
    pub threshold: Option<f64>,
    /// Also report Vis.A and IoU over a grid of thresholds.
    #[arg(long)]
    pub sweep_threshold: bool,
    #[arg(long)]
    pub report: PathBuf,
    /// Print sparklines of the training loss and per-sample IoU.
    #[arg(long, value_parser = ["ascii"])]
    pub plot: Option<String>,
    /// Run the mining ablation, training on this manifest.
    #[arg(long)]
    pub ablation_train: Option<PathBuf>,
    /// Seeds for the ablation, counted up from `--seed`.
    #[arg(long, default_value_t = 5, requires = "ablation_train")]
    pub ablation_seeds: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub pack: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
