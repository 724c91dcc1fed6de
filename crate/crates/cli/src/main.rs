//! `ascend` command-line interface.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 numeric divergence.
//! Failures print one JSON object on the last line of stderr:
//! `{"error":"<usage|data|numeric>","exit_code":N,"message":"..."}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ascend_core::{Error as CoreError, ErrorClass};

#[derive(Debug, Parser)]
#[command(
    name = "ascend",
    version,
    about = "Adaptive-threshold contrastive sexism classifier"
)]
pub struct Cli {
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Random seed (falls back to ASCEND_SEED, then the config file).
    #[arg(long, global = true, env = "ASCEND_SEED")]
    pub seed: Option<u64>,

    /// Positive-mask mode of the contrastive loss.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,

    /// Single-label or multi-label classification.
    #[arg(long, global = true, value_enum)]
    pub task: Option<TaskArg>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TaskArg {
    Multiclass,
    Multilabel,
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// TSV `token<TAB>valence`.
    #[arg(long, value_name = "FILE")]
    pub sentiment_lexicon: Option<PathBuf>,

    /// TSV `token<TAB>category`.
    #[arg(long, value_name = "FILE")]
    pub emotion_lexicon: Option<PathBuf>,

    /// TSV `token<TAB>category<TAB>weight`.
    #[arg(long, value_name = "FILE", conflicts_with = "toxicity_sidecar")]
    pub toxicity_lexicon: Option<PathBuf>,

    /// JSON lines of precomputed toxicity scores keyed by post id.
    #[arg(long, value_name = "FILE")]
    pub toxicity_sidecar: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Initial (soft) or fixed (hard) similarity threshold.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Width of the soft threshold.
    #[arg(long)]
    pub beta: Option<f64>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Train with cross-entropy only.
    #[arg(long)]
    pub no_contrastive: bool,
    /// Use the [CLS] state alone as the representation.
    #[arg(long)]
    pub no_wla: bool,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Strip URLs, mentions, hashtags and stray symbols from post text.
    Clean {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Emit the 20 perception features of every post as JSON lines.
    Featurize {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[command(flatten)]
        lexicons: LexiconArgs,
    },
    /// Generate a seeded synthetic corpus.
    SynthData {
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples_per_label: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        /// Comma-separated label names.
        #[arg(long, default_value = "class0,class1", value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value_t = 12)]
        tokens_per_sample: usize,
        #[arg(long, default_value_t = 12)]
        signal_vocab: usize,
        #[arg(long, default_value_t = 24)]
        noise_vocab: usize,
    },
    /// Train a model; writes `model.ckpt`, `train_log.csv` and `steps.csv`.
    Train {
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Precomputed hidden states (JSON lines) used instead of the encoder.
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        /// Minimum token frequency for the vocabulary.
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[command(flatten)]
        lexicons: LexiconArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score a checkpoint on a labelled dataset; prints metrics JSON.
    Eval {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        lexicons: LexiconArgs,
    },
    /// Train and evaluate once per fixed hard threshold; writes a CSV curve.
    SweepTheta {
        #[arg(long, value_name = "FILE")]
        train_data: PathBuf,
        #[arg(long, value_name = "FILE")]
        eval_data: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
        grid: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[command(flatten)]
        lexicons: LexiconArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Compare every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = ascend_core::gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Convert a public corpus export into the JSON-lines format.
    Convert {
        #[command(subcommand)]
        source: ConvertSource,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExistTaskArg {
    Task1,
    Task2,
}

#[derive(Debug, Subcommand)]
pub enum ConvertSource {
    /// EXIST TSV with `id`, `text`, `task1`, `task2` (and optionally `language`) columns.
    Exist {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "task1")]
        exist_task: ExistTaskArg,
        /// Keep only rows in this language.
        #[arg(long)]
        language: Option<String>,
    },
    /// MLSC TSV `text<TAB>category;category`, split 80/20 under the seed.
    Mlsc {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        train_output: PathBuf,
        #[arg(long, value_name = "FILE")]
        test_output: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numeric(String),
    Core(CoreError),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn class(&self) -> ErrorClass {
        match self {
            CliError::Usage(_) => ErrorClass::Usage,
            CliError::Numeric(_) => ErrorClass::Numeric,
            CliError::Core(e) => e.class(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Numeric(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn report(class: ErrorClass, message: &str) -> ExitCode {
    let code = exit_code(class);
    let kind = match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    };
    let line = serde_json::json!({
        "error": kind,
        "exit_code": code,
        "message": message.replace('\n', " ").trim(),
    });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let first = e.render().to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            return report(ErrorClass::Usage, first.trim_start_matches("error: "));
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.class(), &e.message()),
    }
}
