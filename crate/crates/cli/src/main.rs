//! `edgeprompt`: pre-train a backbone, tune prompts on it, evaluate, and
//! check the theory numerically.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the root for relative output paths.
pub const OUT_DIR_ENV: &str = "EDGEPROMPT_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "edgeprompt", version, about = "Edge prompt tuning for frozen graph neural networks")]
pub struct Cli {
    /// Flat key=value file; keys are flag names. Explicit flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train a backbone and write a checkpoint.
    #[command(args_override_self = true)]
    Pretrain(PretrainArgs),
    /// Tune prompts and a head on a frozen checkpoint.
    #[command(args_override_self = true)]
    Tune(TuneArgs),
    /// Evaluate a prompt file on its test split.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Numerical checks of the theoretical results.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Write a two-class CSBM node-classification dataset.
    #[command(name = "gen-csbm", args_override_self = true)]
    GenCsbm(GenCsbmArgs),
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// graphcl, simgrace, ep-gppt or ep-graphprompt.
    #[arg(long, default_value = "graphcl")]
    strategy: String,
    /// gcn or gin.
    #[arg(long, default_value = "gcn")]
    backbone: String,
    /// Defaults to 2 for GCN and 5 for GIN.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    view_pairs: usize,
    #[arg(long, default_value_t = 0.2)]
    drop_ratio: f64,
    #[arg(long, default_value_t = 0.5)]
    temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.2)]
    mask_ratio: f64,
    /// Pooling of view representations: sum or mean.
    #[arg(long, default_value = "mean")]
    readout: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Expected backbone kind; a mismatching checkpoint is rejected.
    #[arg(long)]
    backbone: Option<String>,
    /// edgeprompt, edgeprompt+, gpf, gpf-plus or classifier-only.
    #[arg(long)]
    method: String,
    /// node or graph; must match the dataset.
    #[arg(long, default_value = "node")]
    task: String,
    #[arg(long, default_value_t = 5)]
    shots: usize,
    /// Anchor counts to sweep. Defaults to 10 for nodes and 5 for graphs.
    #[arg(long, value_delimiter = ',')]
    anchors: Vec<usize>,
    /// One run per seed; the seed drives both the split and the initialisation.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "sum")]
    readout: String,
    /// LeakyReLU slope of the anchor score function.
    #[arg(long, default_value_t = 0.2)]
    slope: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: PathBuf,
    /// Optional JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum VerifyCommand {
    /// Distance amplification by anchor prompts on a CSBM graph.
    #[command(args_override_self = true)]
    Theorem1(Theorem1Args),
    /// Shared edge prompt versus feature prompt under sum readout.
    #[command(args_override_self = true)]
    Theorem2(Theorem2Args),
}

#[derive(Args, Debug)]
struct Theorem1Args {
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    /// Target distance ratio.
    #[arg(long = "T", value_name = "T")]
    target: f64,
    /// Nodes per class.
    #[arg(long, default_value_t = 2000)]
    nodes: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Distance between the class means.
    #[arg(long, default_value_t = 1.0)]
    gap: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Theorem2Args {
    /// Largest graph drawn.
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenCsbmArgs {
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    #[arg(long, default_value_t = 0.2)]
    q: f64,
    #[arg(long, default_value_t = 500)]
    n_per_class: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::inject(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
