use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod error;
mod manifest;

use simtrans_core::toy::SyntheticTaskSpec;
use simtrans_core::Execution;

/// Loss kernels, streaming evaluation and toy training for
/// simultaneous-translation transducers.
///
/// Exit codes: 0 success, 1 validation failure, 2 I/O or format error.
#[derive(Debug, Parser)]
#[command(name = "simtrans", version)]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-sentence NLL, expected latency, CE and total loss.
    Loss(LossArgs),
    /// Finite-difference check of the NLL and latency gradients.
    Gradcheck(GradcheckArgs),
    /// AL, DAL, path latency and quality of decoded paths.
    Eval(EvalArgs),
    /// Train the toy scorer on a synthetic task.
    Train(TrainArgs),
    /// Greedy-decode held-out sentences with a trained checkpoint.
    Decode(DecodeArgs),
    /// Latency-quality curve over a grid of (d, lambda_latency).
    Curve(CurveArgs),
    /// Block-processing attention mask.
    Mask(MaskArgs),
}

#[derive(Debug, Args, Serialize)]
struct LossArgs {
    /// One lattice per line.
    lattices: PathBuf,
    /// One `{"tokens": [...], "src_len": n}` record per line.
    targets: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda_latency: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_ce: f64,
    /// Source units per READ decision.
    #[arg(long, default_value_t = 1)]
    d: usize,
}

#[derive(Debug, Args, Serialize)]
struct GradcheckArgs {
    /// Lattice size as `TxU`.
    #[arg(long, default_value = "4x3", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 5)]
    vocab: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Coordinates checked per trial.
    #[arg(long, default_value_t = 20)]
    coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-5)]
    nll_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    latency_tol: f64,
    /// Also write the report as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// One hypothesis per line: `{"actions", "tokens", "src_len", "d"?}` or
    /// `{"delays", "tokens", "src_len", "d"?}`.
    paths: PathBuf,
    /// One `{"tokens": [...]}` reference per line.
    refs: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    /// Strip a trailing token with this id before scoring quality.
    #[arg(long)]
    eos_id: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Task {
    /// Token-wise mapping only.
    Copy,
    /// Mapping with look-ahead pair swaps.
    Swap,
    /// Swaps plus sentence moods decided by final punctuation.
    SwapMoods,
}

impl Task {
    fn spec(self, seed: u64) -> SyntheticTaskSpec {
        match self {
            Task::Copy => SyntheticTaskSpec::copy(seed),
            Task::Swap => SyntheticTaskSpec::swap(seed),
            Task::SwapMoods => SyntheticTaskSpec::swap_moods(seed),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct OptimArgs {
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.02)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_ce: f64,
    /// Training sentences.
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Task::SwapMoods)]
    task: Task,
    /// Seeds the task, its corpus, the initialization and batching.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    lambda_latency: f64,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    #[command(flatten)]
    optim: OptimArgs,
    /// Checkpoint JSON.
    #[arg(short, long)]
    out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::SwapMoods)]
    task: Task,
    /// Task seed used at training time.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Decoded paths JSONL.
    #[arg(short, long)]
    out: PathBuf,
    /// References JSONL.
    #[arg(long)]
    refs: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CurveArgs {
    #[arg(long, value_enum, default_value_t = Task::SwapMoods)]
    task: Task,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2])]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 1.0])]
    lambda_latency: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    heldout_size: usize,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MaskFormat {
    Packed,
    Intervals,
}

#[derive(Debug, Args, Serialize)]
struct MaskArgs {
    /// Block size.
    #[arg(long)]
    m: usize,
    /// Right context in frames.
    #[arg(long)]
    r: usize,
    #[arg(long)]
    len: usize,
    #[arg(long, value_enum, default_value_t = MaskFormat::Intervals)]
    format: MaskFormat,
    #[arg(short, long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (t, u) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected TxU, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(t)?, parse(u)?))
}

/// Outcome of a command that ran to completion.
enum Status {
    Ok,
    /// Outputs were written but some records failed validation.
    Failed(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match &cli.command {
        Command::Loss(a) => commands::loss(a, exec),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Eval(a) => commands::eval(a, exec),
        Command::Train(a) => commands::train(a, exec),
        Command::Decode(a) => commands::decode(a, exec),
        Command::Curve(a) => commands::curve(a, exec),
        Command::Mask(a) => commands::mask(a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
