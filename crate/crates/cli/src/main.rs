use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tenence::eval::Regime;

mod commands;

#[derive(Parser)]
#[command(
    name = "tenence",
    version,
    about = "Contrastive representation learning on discrete-time dynamic graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset into a canonical snapshot container.
    Ingest(IngestArgs),
    /// Train one model per seed and write checkpoints and loss histories.
    Train(RunArgs),
    /// Score trained checkpoints on the held-out snapshots.
    Evaluate(RunArgs),
    /// Train and evaluate the four loss configurations.
    Ablate(RunArgs),
    /// Temporal correlation against null models, and snapshot densities.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Manifest id, `synthetic`, or a path to an edge list.
    #[arg(long)]
    dataset: String,
    /// Number of snapshots for event data. Without it, a path is read as
    /// `src dst step` rows.
    #[arg(long)]
    steps: Option<usize>,
    /// Seed for `synthetic`.
    #[arg(long, env = "TENENCE_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
pub struct RunArgs {
    /// Ingested dataset id, or a path to a snapshot container.
    #[arg(long)]
    pub dataset: String,
    /// TOML file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "TENENCE_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated seeds; overrides `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub nce_negatives: Option<usize>,
    /// Contrast against every candidate instead of a sample.
    #[arg(long)]
    pub exhaustive_nce: bool,
    /// Regimes to evaluate (repeatable); all four by default.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Vec<Regime>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    dataset: String,
    /// Samples per null model.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, env = "TENENCE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: tenence::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a.dataset, a.steps, a.seed.unwrap_or(0), &a.out),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Analyze(a) => commands::analyze(&a.dataset, a.samples, a.seed, &a.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
