mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use sifn::corpus::CorpusError;
use sifn::embeddings::EmbeddingError;
use sifn::evalkit::EvalError;
use sifn::model::ModelError;
use sifn::trainer::TrainError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) | ModelError::UnknownVariant(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            TrainError::NonFiniteGradient { .. } | TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Train(t) => t.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sifn", version, about = "Sentiment-aware review-based rating prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse Amazon JSON-lines reviews, k-core filter, split and build profiles.
    Preprocess(PreprocessArgs),
    /// Generate a planted-signal synthetic review corpus.
    Synth(SynthArgs),
    /// Train one model variant with early stopping on validation MSE.
    Train(TrainArgs),
    /// Score a trained run on the test split and update results.json.
    Evaluate(EvaluateArgs),
    /// Train every variant over several seeds and compare test MSE.
    Ablate(AblateArgs),
    /// Grid-search the sentiment loss weight on validation MSE.
    TuneLambda(TuneLambdaArgs),
    /// Export word and review attention for selected pairs.
    Visualize(VisualizeArgs),
    /// Finite-difference check of every model gradient on a random problem.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    min_reviews: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    /// Train/validation/test ratios, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// σ of the rating noise before rounding.
    #[arg(long)]
    noise: Option<f64>,
    /// Number of filler (sentiment-free) words.
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    review_len: Option<usize>,
    /// Sentiment words injected per review.
    #[arg(long)]
    planted: Option<usize>,
    #[arg(long)]
    glove_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Hyperparameters shared by the training subcommands.
#[derive(Debug, Args, Default)]
struct TrainFlags {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// full, sa, fn, in, w2v or sp (also SIFN / SIFN_sp style names).
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Global gradient-norm clip; 0 disables.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    track_train_mse: Option<bool>,
    #[arg(long)]
    target_train_mse: Option<f64>,
    /// Word backend: trainable, static or contextual.
    #[arg(long)]
    embeddings: Option<String>,
    /// GloVe-format table for the static backend (and `w2v` in ablations).
    #[arg(long)]
    glove: Option<PathBuf>,
    #[arg(long)]
    ctx_index: Option<PathBuf>,
    #[arg(long)]
    ctx_matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory of a `train` run.
    #[arg(long)]
    run: PathBuf,
    /// Directory for results.json; defaults to the run's parent directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Column name in results.json; defaults to the data directory name.
    #[arg(long)]
    dataset_name: Option<String>,
    #[arg(long, default_value_t = 100)]
    batch_size: usize,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct TuneLambdaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated λ values.
    #[arg(long)]
    grid: Option<String>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Debug, Args)]
struct VisualizeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `USER,ITEM`; repeatable. Defaults to the first three test pairs.
    #[arg(long = "pair")]
    pairs: Vec<String>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 3)]
    l: usize,
    /// Batch size.
    #[arg(long, default_value_t = 2)]
    b: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "full")]
    variant: String,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SIFN_NUM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SIFN_NUM_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(argv: Vec<OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::TuneLambda(a) => commands::tune_lambda(a),
        Command::Visualize(a) => commands::visualize(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ExitCode::from(run(std::env::args_os().collect()))
}
