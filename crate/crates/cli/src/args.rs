use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use influxcl::autocl::{RewardKind, Variant};
use influxcl::diffcore::{Activation, MaskSelector};
use influxcl::influence::MethodKind;

#[derive(Debug, Parser)]
#[command(
    name = "influxcl",
    version,
    about = "Self-influence scoring, data filtering and bandit curricula for small classifiers",
    long_about = "Every command writes into a run directory (default: $INFLUXCL_RUNS_DIR/<command>-<config hash>, \
                  falling back to ./runs) and prints its path on success. Completed run directories are \
                  never overwritten unless --force is given. Settings resolve as flags > --manifest > defaults."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/dev/test JSONL splits, optionally with flipped training labels.
    GenData(GenDataArgs),
    /// Train a model on a data directory, saving checkpoints and a metric trace.
    Train(TrainArgs),
    /// Compute self-influence scores for the training split of a trained run.
    Score(ScoreArgs),
    /// Train two configurations and compare their score rankings and predictions.
    Stability(StabilityArgs),
    /// Drop the highest-scored percentile of a training split.
    Filter(FilterArgs),
    /// Split a score table into equal-size quantile buckets.
    Buckets(BucketsArgs),
    /// Train with a bandit choosing which bucket each batch comes from.
    Autocl(AutoclArgs),
    /// Emit plot-ready CSVs from buckets, policy logs and evaluations.
    Report(ReportArgs),
    /// Run a whole manifest: score, filter, bucket and retrain under every regime.
    Run(RunArgs),
}

/// Where results go.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory (default: <runs root>/<command>-<config hash>).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Replace a completed run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    Clusters,
    Bow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON manifest whose `task` section supplies defaults.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    /// Training examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimension (clusters only).
    #[arg(long)]
    pub dim: Option<usize>,
    /// Distance scale between class means (clusters only).
    #[arg(long)]
    pub separation: Option<f64>,
    /// Vocabulary size (bow only).
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Fraction of training labels to flip, in [0, 1).
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Architecture and optimization settings shared by every training command.
#[derive(Debug, Clone, Args)]
pub struct ModelTrainArgs {
    /// JSON manifest supplying model, train and seed defaults.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    /// Momentum coefficient for --optimizer momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Record dev metrics every N steps (0: final step only).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Seed for parameter initialization.
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Seed for batch composition.
    #[arg(long)]
    pub order_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with train.jsonl, dev.jsonl and test.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelTrainArgs,
    /// Evenly spaced checkpoints to save (0 saves none).
    #[arg(long)]
    pub checkpoints: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Influence method settings.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long)]
    pub method: Option<MethodKind>,
    /// Layers whose parameters are scored: first, last or all.
    #[arg(long)]
    pub mask: Option<MaskSelector>,
    /// Eigenvectors kept by ABIF.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Arnoldi iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Training examples averaged into each Hessian-vector product.
    #[arg(long)]
    pub hvp_examples: Option<usize>,
    /// TracIn random projection size.
    #[arg(long)]
    pub projection: Option<usize>,
    /// Use full TracIn gradients instead of projecting.
    #[arg(long, conflicts_with = "projection")]
    pub no_projection: bool,
    /// Checkpoints TracIn averages over.
    #[arg(long)]
    pub tracin_checkpoints: Option<usize>,
    /// Seed for Arnoldi start vectors and projections.
    #[arg(long)]
    pub score_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run directory produced by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Data directory (default: the one the run was trained on).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON manifest whose `influence` and `seeds` sections supply defaults.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelTrainArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Batch size of the second run.
    #[arg(long)]
    pub vary_batch_size: Option<usize>,
    /// Order seed of the second run.
    #[arg(long)]
    pub vary_order_seed: Option<u64>,
    /// Init seed of the second run.
    #[arg(long)]
    pub vary_init_seed: Option<u64>,
    /// Multiply every hidden width of the second run.
    #[arg(long)]
    pub width_factor: Option<usize>,
    /// Number of hidden layers of the second run.
    #[arg(long)]
    pub depth: Option<usize>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Data directory whose train.jsonl is filtered; dev and test are copied.
    #[arg(long)]
    pub data: PathBuf,
    /// Score CSV written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Percentage of highest-scored examples to drop.
    #[arg(long)]
    pub pct: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BucketsArgs {
    /// Score CSV written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    /// Number of buckets.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AutoclArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Bucket CSV written by `buckets`.
    #[arg(long)]
    pub buckets: PathBuf,
    #[command(flatten)]
    pub model: ModelTrainArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub reward: Option<RewardKind>,
    /// Exploration rate.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Bandit learning rate.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Weight sharing for exp3s.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Rewards kept for quantile scaling.
    #[arg(long)]
    pub window: Option<usize>,
    /// Dev examples per cosine-reward batch.
    #[arg(long)]
    pub reward_batch_size: Option<usize>,
    /// Seed for arm draws and reward batches.
    #[arg(long)]
    pub bandit_seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Data directory whose train.jsonl carries the noisy flags.
    #[arg(long, requires = "buckets")]
    pub data: Option<PathBuf>,
    /// Bucket CSV for the noise-by-bucket histogram.
    #[arg(long, requires = "data")]
    pub buckets: Option<PathBuf>,
    /// Policy log CSV for the policy-over-time table.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Keep every Nth policy row.
    #[arg(long, default_value_t = 100)]
    pub every: usize,
    /// eval.json files to tabulate (repeatable).
    #[arg(long = "eval")]
    pub evals: Vec<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}
