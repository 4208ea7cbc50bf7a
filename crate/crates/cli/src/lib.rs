//! Command-line surface of corefbridge.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! abort or failed gradient check, 5 weights format version mismatch.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use corefbridge::attention::Mechanism;
use corefbridge::resolver::Strategy;
use corefbridge::training::Arm;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "corefbridge",
    version,
    about = "Coreference resolution bridging syntax and semantics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic annotated corpus as CoNLL-U.
    Generate(GenerateArgs),
    /// Train one pipeline arm and write a weights file.
    Train(TrainArgs),
    /// Resolve the mentions of a corpus with trained weights.
    Predict(PredictArgs),
    /// Score predicted chains against gold chains.
    Evaluate(EvaluateArgs),
    /// Train and score every arm on one corpus split.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
}

/// Config file plus overrides, shared by the training commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config with embedding, attention, resolver and train tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set train.lr=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Training seed; beats COREFBRIDGE_SEED and the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 6)]
    pub sentences: usize,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value = "full")]
    pub arm: Arm,
    /// Weights file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus scored after every epoch.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Where to write the run report; printed to stdout otherwise.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// JSON map from document id to `{"dim", "rows", "data"}`, used in
    /// place of the configured provider.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// CoNLL-U output carrying the predicted `# chains`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Gold corpus. Repeatable; paired with `--pred` by position.
    #[arg(long = "test-set", required = true)]
    pub test_sets: Vec<PathBuf>,
    #[arg(long = "pred", required = true)]
    pub preds: Vec<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Corpus split in order into train, dev and test.
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Train, dev and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.15, 0.15])]
    pub split: Vec<f64>,
    /// Extra gold corpora scored alongside the test split. Repeatable.
    #[arg(long = "test-set")]
    pub test_sets: Vec<PathBuf>,
    /// Grid report (JSON); the table always goes to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub docs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "cross")]
    pub mechanism: Mechanism,
    #[arg(long, default_value = "full")]
    pub arm: Arm,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Test hook: perturbs one analytic gradient entry.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("corefbridge: {e}");
            e.exit_code()
        }
    }
}
