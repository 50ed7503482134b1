//! `newsrec`: drive the recommendation workflow from the command line.
//!
//! Subcommands: `generate-descriptions`, `preprocess`, `train`, `evaluate`,
//! `stats`. Machine-readable outputs are JSON; every run that writes files
//! also writes a manifest with input digests.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use newsrec_core::compose::CompositionMode;
use newsrec_core::user::Arch;

#[derive(Parser)]
#[command(name = "newsrec", version, about = "Content-based news recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a category description for every key in the catalog.
    GenerateDescriptions(GenerateArgs),
    /// Compose and tokenize the catalog into a corpus file.
    Preprocess(PreprocessArgs),
    /// Train a recommender and write checkpoints.
    Train(TrainArgs),
    /// Score an impression log with a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Title,
    Template,
    Generated,
}

impl From<ModeArg> for CompositionMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::Title => CompositionMode::TitleOnly,
            ModeArg::Template => CompositionMode::TitleTemplate,
            ModeArg::Generated => CompositionMode::TitleGenerated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Naml,
    Nrms,
    Npa,
}

impl From<ArchArg> for Arch {
    fn from(value: ArchArg) -> Self {
        match value {
            ArchArg::Naml => Arch::Naml,
            ArchArg::Nrms => Arch::Nrms,
            ArchArg::Npa => Arch::Npa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlmArg {
    Toy,
    DistilbertBase,
    BertBase,
}

impl PlmArg {
    fn as_str(&self) -> &'static str {
        match self {
            PlmArg::Toy => "toy",
            PlmArg::DistilbertBase => "distilbert-base",
            PlmArg::BertBase => "bert-base",
        }
    }
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// MIND news.tsv catalog.
    #[arg(long)]
    news: PathBuf,
    /// Description cache file to create or extend.
    #[arg(long)]
    out: PathBuf,
    /// Offline fixture file (JSON object of key -> text) instead of a live
    /// endpoint.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Model identifier for the live endpoint.
    #[arg(long, default_value = "gpt-4")]
    model: String,
    /// Chat-completions endpoint base.
    #[arg(long, default_value = "https://api.openai.com/v1")]
    base_url: String,
    /// Environment variable holding the API credential.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    /// Regenerate keys that already have cached entries.
    #[arg(long)]
    force: bool,
    /// Concurrent requests.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Cap on request starts per second, shared across workers.
    #[arg(long)]
    rps: Option<f64>,
    /// Attempts per key before giving up.
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
}

#[derive(clap::Args)]
struct PreprocessArgs {
    #[arg(long)]
    news: PathBuf,
    /// Corpus file (JSON lines) to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Description cache; required for generated mode.
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "toy")]
    plm: PlmArg,
    /// Override the mode-dependent token cap.
    #[arg(long)]
    max_len: Option<usize>,
    /// WordPiece vocab.txt, required for BERT-family encoders.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    /// Output directory for checkpoints, reports, and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// JSON configuration file mirroring the model configuration; flags
    /// below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    descriptions: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long, value_enum)]
    plm: Option<PlmArg>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// WordPiece vocab.txt, required for BERT-family encoders.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Train the heads only, leaving the transformer trunk at its
    /// initialization.
    #[arg(long)]
    frozen_plm: bool,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    /// Optional output directory for metrics.json and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long)]
    news: PathBuf,
    #[arg(long)]
    behaviors: PathBuf,
    /// Optional output directory for stats.json and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateDescriptions(args) => commands::generate_descriptions(args),
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Stats(args) => commands::stats(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
