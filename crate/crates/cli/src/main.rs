//! `surfreg`: dataset generation, training, matching, registration,
//! evaluation and visualization export.
//!
//! Every command is deterministic given its flags and seed. On failure the
//! process exits nonzero and writes `{"error": {"kind", "message"}}` to stderr.

mod commands;
mod config;
mod error;
mod output;
mod vis;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "surfreg", version, about = "Partial-surface correspondence learning and rigid registration")]
struct Cli {
    /// Seed for data generation, training and RANSAC; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config with optional `seed`, `dataset`, `net`, `train`, `fpfh` and `benchmark` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic source/target pairs with a mesh-level train/test split.
    GenData(GenDataArgs),
    /// Train the matcher on the train split; writes a checkpoint and a loss log.
    Train(TrainArgs),
    /// Match one source/target pair with a trained checkpoint.
    Match(MatchArgs),
    /// RANSAC + ICP from a match file.
    Register(RegisterArgs),
    /// Benchmark methods on a dataset split.
    Eval(EvalArgs),
    /// Colored PLY files showing matched points and match segments.
    ExportVis(ExportVisArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    meshes: Option<usize>,
    /// Samples per mesh.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    vertices: Option<usize>,
    /// Meshes held out for the test split.
    #[arg(long)]
    test_meshes: Option<usize>,
    /// Closed PLY meshes used in place of the first synthetic meshes.
    #[arg(long = "import-mesh")]
    import_mesh: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory containing `manifest.json`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

/// A pair given either as a dataset sample directory or as two PLY files.
#[derive(Debug, Args)]
struct PairArgs {
    /// Sample directory with `source.ply` and `target.ply`.
    #[arg(long, conflicts_with_all = ["source", "target"])]
    sample: Option<PathBuf>,
    #[arg(long, requires = "target")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source")]
    target: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    pair: PairArgs,
}

#[derive(Debug, Args)]
struct RegisterArgs {
    /// `matches.json` written by `match`.
    #[arg(long, required_unless_present = "ground_truth")]
    matches: Option<PathBuf>,
    /// Use the sample's ground-truth matches instead of a match file.
    #[arg(long, requires = "sample")]
    ground_truth: bool,
    #[command(flatten)]
    pair: PairArgs,
    #[arg(long)]
    ransac_iterations: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Needed when `learned` is among the methods.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated subset of learned, fpfh, ground_truth.
    #[arg(long, value_delimiter = ',', default_value = "learned,fpfh,ground_truth")]
    methods: Vec<String>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluate only the first N samples of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
    #[arg(long)]
    skip_registration: bool,
}

#[derive(Debug, Args)]
struct ExportVisArgs {
    #[arg(long)]
    matches: PathBuf,
    #[command(flatten)]
    pair: PairArgs,
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let ctx = config::Context::resolve(cli.config.as_deref(), cli.seed, cli.out, cli.force)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(ctx, a),
        Command::Train(a) => commands::train(ctx, a),
        Command::Match(a) => commands::match_pair(ctx, a),
        Command::Register(a) => commands::register(ctx, a),
        Command::Eval(a) => commands::eval(ctx, a),
        Command::ExportVis(a) => commands::export_vis(ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return CliError::Usage(e.to_string().trim_end().to_string()).report(),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => e.report(),
    }
}
