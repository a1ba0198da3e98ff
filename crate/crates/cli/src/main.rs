mod commands;
mod config;
mod export;
mod jobs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metasampler::models::TaskKind;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] metasampler::Error),
    #[error("{0}")]
    Input(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 input error, 3 numerical abort, 4 protocol violation.
    pub fn exit_code(&self) -> u8 {
        use metasampler::Error as E;
        match self {
            CliError::Core(E::NumericalAbort(_) | E::PretrainFailure { .. }) => 3,
            CliError::Core(E::PoolOverlap(_)) => 4,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "metasampler", version, about = "Task-oriented point cloud sampling experiments")]
struct Cli {
    /// Root directory of all inputs and outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Concurrent jobs, one per seed (default: $METASAMPLER_THREADS or 1).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic shape dataset.
    GenData(GenDataArgs),
    /// Pretrain frozen task models.
    Pretrain(PretrainArgs),
    /// Train a sampler against one (single) or several (joint) task models.
    TrainSampler(TrainSamplerArgs),
    /// Meta-train a sampler over several tasks.
    MetaTrain(MetaTrainArgs),
    /// Fine-tune a meta-trained (or fresh) sampler on unseen task models.
    Adapt(AdaptArgs),
    /// Evaluate samplers and classical baselines on a test pool.
    Eval(EvalArgs),
    /// Export sampled subsets and overlay drawings.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArg {
    Classification,
    Reconstruction,
    Retrieval,
    Pose,
}

impl TaskArg {
    pub fn kind(self) -> TaskKind {
        match self {
            TaskArg::Classification => TaskKind::Classification,
            TaskArg::Reconstruction => TaskKind::Reconstruction,
            TaskArg::Retrieval => TaskKind::Retrieval,
            TaskArg::Pose => TaskKind::PoseRegression,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Meta,
    Scratch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Fps,
    Random,
    Idis,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModeArg {
    Matched,
    Soft,
}

#[derive(Args, Debug, Serialize)]
pub struct GenDataArgs {
    /// Dataset directory name under the root.
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distribution-shifted variant (stretched shapes, more noise, skewed classes).
    #[arg(long)]
    pub shift: bool,
    /// Points per cloud.
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    #[arg(long, default_value_t = 120)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 40)]
    pub val_per_class: usize,
    #[arg(long, default_value_t = 40)]
    pub test_per_class: usize,
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Model seeds; each becomes models/<task>/<seed>.ckpt.
    #[arg(long = "seed", value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_epochs: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Caps the batches per epoch.
    #[arg(long)]
    pub max_batches: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct SamplerTrainArgs {
    /// Sampling ratio m/n.
    #[arg(long, default_value_t = 8)]
    pub ratio: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 24)]
    pub batch_size: usize,
    /// Caps the batches per epoch.
    #[arg(long)]
    pub max_batches: Option<usize>,
    /// Neighbours in the soft projection.
    #[arg(long, default_value_t = 4)]
    pub k_proj: usize,
    /// Evaluation episodes or pairs for the pair tasks.
    #[arg(long, default_value_t = 200)]
    pub eval_count: usize,
    /// Candidates per retrieval episode.
    #[arg(long, default_value_t = 4)]
    pub n_way: usize,
    #[arg(long, value_enum, default_value = "matched")]
    pub eval_mode: EvalModeArg,
    /// Multi-class BCE on one-hot targets instead of softmax cross-entropy.
    #[arg(long)]
    pub bce: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainSamplerArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "joint")]
    pub mode: Mode,
    /// Models trained against (default 1 for single, 3 for joint).
    #[arg(long)]
    pub k: Option<usize>,
    /// Run seeds, one output directory each.
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Seeds of the pretrained training models; the first k are used.
    #[arg(long, value_delimiter = ',', required = true)]
    pub train_models: Vec<u64>,
    /// Seeds of the held-out test models.
    #[arg(long, value_delimiter = ',', required = true)]
    pub test_models: Vec<u64>,
    /// Run name (default derived from the flags).
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub train: SamplerTrainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct MetaTrainArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "classification,reconstruction,retrieval")]
    pub tasks: Vec<TaskArg>,
    /// Seeds of the pretrained models of every task's pool.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<u64>,
    #[arg(long, default_value_t = 8)]
    pub ratio: usize,
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    #[arg(long, default_value_t = 5)]
    pub inner_steps: usize,
    /// Differentiate through the inner updates (false: first-order).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub second_order: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub aux_lr: f64,
    #[arg(long, default_value_t = 24)]
    pub batch_size: usize,
    /// Divide each task's loss by its running mean.
    #[arg(long)]
    pub normalize_tasks: bool,
    #[arg(long, default_value_t = 4)]
    pub k_proj: usize,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    #[arg(long)]
    pub bce: bool,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct AdaptArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value = "meta")]
    pub init: Init,
    /// Meta-training run to start from (its seed directory matches --seed).
    #[arg(long)]
    pub meta: Option<String>,
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub train_models: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub test_models: Vec<u64>,
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub train: SamplerTrainArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Sampling ratio m/n; 1 evaluates the full clouds.
    #[arg(long, default_value_t = 8)]
    pub ratio: usize,
    /// Sampler runs to evaluate (runs/<name>/seed<S>).
    #[arg(long, value_delimiter = ',')]
    pub sampler: Vec<String>,
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub test_models: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "fps,random,idis")]
    pub baselines: Vec<Baseline>,
    #[arg(long, default_value_t = 200)]
    pub eval_count: usize,
    #[arg(long, default_value_t = 4)]
    pub n_way: usize,
    #[arg(long, value_enum, default_value = "matched")]
    pub eval_mode: EvalModeArg,
    /// Neighbours for the inverse-density baseline.
    #[arg(long, default_value_t = 8)]
    pub idis_k: usize,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Args, Debug, Serialize)]
pub struct ExportArgs {
    #[arg(long, default_value = "data")]
    pub data: String,
    /// Sampler checkpoints or run directories, relative to the root.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sampler: Vec<String>,
    /// Test shapes to draw.
    #[arg(long, default_value_t = 6)]
    pub shapes: usize,
    /// Pair of sampler positions (in --sampler order) for the overlap statistic.
    #[arg(long, value_delimiter = ',')]
    pub overlap: Option<Vec<usize>>,
    #[arg(long, default_value = "export")]
    pub name: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = jobs::worker_count(cli.jobs);
    let ctx = commands::Context { root: cli.out, workers };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::Pretrain(a) => commands::pretrain(&ctx, a),
        Command::TrainSampler(a) => commands::train_sampler(&ctx, a),
        Command::MetaTrain(a) => commands::meta_train(&ctx, a),
        Command::Adapt(a) => commands::adapt(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Export(a) => export::export(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
