use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "lednet", version, about = "Build, inspect, train and run LEDNet segmentation networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-stage shapes, per-layer parameter and MAC counts.
    Summarize(Summarize),
    /// Run the finite-difference gradient suite over every op.
    Gradcheck(Gradcheck),
    /// Write a synthetic dataset.
    GenData(GenData),
    /// Train a network on a dataset directory.
    Train(Train),
    /// Score a checkpoint on a dataset directory.
    Eval(Eval),
    /// Write colorized predictions for PPM images.
    Predict(Predict),
    /// Time forward passes.
    Bench(Bench),
}

#[derive(Debug, Args)]
pub struct NetShape {
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 1024)]
    pub width: usize,
}

#[derive(Debug, Args)]
pub struct Summarize {
    #[command(flatten)]
    pub shape: NetShape,
    /// Compare the shape trace with the reference 512x1024 layout.
    #[arg(long)]
    pub table1: bool,
    /// Also print the residual-module cost comparison at this width.
    #[arg(long)]
    pub compare_modules: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace one op's backward with a deliberately wrong one.
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenData {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint; running statistics go to `<checkpoint>.bnstats`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics log path [default: `<checkpoint>.log`].
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Schedule length [default: --iters].
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub eval_every: usize,
    /// Stop after an evaluation whose mIoU exceeds this value.
    #[arg(long)]
    pub stop_at_miou: Option<f64>,
    /// Suppress per-iteration output on stdout.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct Predict {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PPM files, or directories whose `*.ppm` files are all used.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Bench {
    #[command(flatten)]
    pub shape: NetShape,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
