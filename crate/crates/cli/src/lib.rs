//! The `ascn` command line: synthetic data generation, neighbourhood
//! analysis, training, evaluation, single-cloud inference and multi-seed
//! cross-density experiments.

mod commands;
mod error;
pub mod experiment;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "ascn", version, about = "Adaptive structural convolution for point-cloud classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON configuration file (meaning depends on the command).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Threads for data-parallel evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset (line / plane / sphere by default).
    Datagen(DatagenArgs),
    /// Per-point optimal neighbourhood size and eigenentropy curve, as CSV.
    Analyze(AnalyzeArgs),
    /// Train a classifier; writes model.ascn and train_log.jsonl.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a model on a dataset.
    Eval(EvalArgs),
    /// Classify a single cloud.
    Infer(InferArgs),
    /// Train per seed, evaluate on several test sets, tabulate.
    Crossdomain(CrossdomainArgs),
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Clouds per class (overrides the counts in --config).
    #[arg(long)]
    pub count: Option<usize>,
    /// Also write a companion dataset keeping every k-th ring, under
    /// `<out>/decimated_x<k>`. Repeatable.
    #[arg(long)]
    pub decimate: Vec<usize>,
    /// Keep clouds in their canonical orientation.
    #[arg(long)]
    pub no_rotation: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Cloud file (.csv or .ply).
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub m_min: usize,
    #[arg(long, default_value_t = 10)]
    pub m_max: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory (with manifest.json).
    pub dataset: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use this many neighbours everywhere instead of the adaptive choice.
    #[arg(long)]
    pub fixed_m: Option<usize>,
    #[arg(long, value_enum)]
    pub kernels: Option<Kernels>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kernels {
    StrConv,
    DirOnly,
    DistOnly,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub model: PathBuf,
    /// Cloud file (.csv or .ply).
    pub cloud: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossdomainArgs {
    /// Override the experiment's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Runs one command and returns what it prints.
pub fn run(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Datagen(a) => commands::datagen(cli, a),
        Command::Analyze(a) => commands::analyze(cli, a),
        Command::Train(a) => commands::train(cli, a),
        Command::Eval(a) => commands::eval(cli, a),
        Command::Infer(a) => commands::infer(cli, a),
        Command::Crossdomain(a) => commands::crossdomain(cli, a),
    }
}
