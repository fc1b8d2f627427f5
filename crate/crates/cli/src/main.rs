//! `ttrnn`: decomposition, training, evaluation, featurization, benchmark
//! and gradient-check commands over the `ttrnn` library.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ttrnn", version, about = "Tensor-train compressed recurrent networks")]
pub struct Cli {
    /// Seed for every random choice; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory for written artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Machine-readable output; a plain table when absent.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dense, per-gate TT and fused TT parameter counts.
    Params(ModelOverrides),
    /// TT-SVD of a stored matrix into a TT checkpoint.
    Decompose(DecomposeArgs),
    /// Train the configured model; writes checkpoint, history and summary.
    Train,
    /// Accuracy or EER of a checkpoint, or EER of a score file.
    Eval(EvalArgs),
    /// Model-size and step-latency table.
    Bench(BenchArgs),
    /// Log-mel or MFCC features of a WAV file, or pixel sequences of an IDX file.
    Featurize(FeaturizeArgs),
    /// Finite-difference checks of every primitive and recurrent step.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelOverrides {
    #[arg(long)]
    pub cell: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub input: Option<usize>,
    /// Head size; 0 for none.
    #[arg(long)]
    pub output: Option<usize>,
    #[arg(long)]
    pub cores: Option<usize>,
    /// Internal TT rank used everywhere.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub gate_rank: Option<usize>,
    /// Leave gate biases out of the counts.
    #[arg(long)]
    pub no_bias: bool,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// TTEN1 file holding a rank-2 tensor.
    #[arg(long)]
    pub input: PathBuf,
    /// Row factors, comma separated; balanced over `--cores` when absent.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<usize>>,
    /// Column factors, comma separated; balanced over `--cores` when absent.
    #[arg(long, value_delimiter = ',')]
    pub cols: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2)]
    pub cores: usize,
    /// Full rank profile `1,r_1,..,1`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["max_rank", "tol"])]
    pub ranks: Option<Vec<usize>>,
    #[arg(long, conflicts_with = "tol")]
    pub max_rank: Option<usize>,
    /// Relative Frobenius error budget.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Accuracy,
    Eer,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long, conflicts_with = "scores")]
    pub checkpoint: Option<PathBuf>,
    /// CSV of `label,score` rows.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub metric: Option<Metric>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Measured repetitions per timing; the config's value when absent.
    #[arg(long)]
    pub reps: Option<usize>,
    #[command(flatten)]
    pub model: ModelOverrides,
    /// TT ranks, one table row each.
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// WAV (PCM16) or IDX file.
    #[arg(long)]
    pub input: PathBuf,
    /// Emit this many MFCCs per frame instead of log-mel energies.
    #[arg(long)]
    pub mfcc: Option<usize>,
    /// Apply a fixed pixel permutation drawn from `--seed` (IDX input).
    #[arg(long)]
    pub permute: bool,
    #[arg(long)]
    pub frame_ms: Option<f64>,
    #[arg(long)]
    pub hop_ms: Option<f64>,
    #[arg(long)]
    pub mels: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Run a single named check.
    #[arg(long)]
    pub only: Option<String>,
    /// Central-difference step.
    #[arg(long, default_value_t = ttrnn::checks::DEFAULT_EPS)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = ttrnn::checks::DEFAULT_TOL)]
    pub tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
