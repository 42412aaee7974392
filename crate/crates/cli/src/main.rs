//! `voxsep`: command-line driver for mining, dataset tooling, training,
//! separation and evaluation.

mod commands;
mod config;
mod failure;
mod meta;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "voxsep", version, about = "Singing-voice separation experiments", propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align declared mix/instrumental pairs and derive vocal stems from them.
    Mine(MineArgs),
    /// Assign whole artists to train/val/test parts.
    DatasetSplit(SplitArgs),
    /// Subsample tracks so the genre distribution matches a target.
    DatasetRebalance(RebalanceArgs),
    /// Draw augmentations for a few training segments and record what they did.
    AugmentPreview(PreviewArgs),
    /// Write a synthetic dataset of toy songs with an artist split.
    MakeToy(ToyArgs),
    /// Train one U-Net per source.
    Train(TrainArgs),
    /// Separate songs with trained checkpoints.
    Separate(SeparateArgs),
    /// Score separated songs against their reference stems.
    Evaluate(EvaluateArgs),
    /// Paired t-tests and median tables over several result files.
    Compare(CompareArgs),
    /// Rebuild the Markdown report and p-value matrix of a `compare` run.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct MineArgs {
    /// Candidate pair list (JSON).
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value_t = 300.0)]
    pub max_duration_s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_duration_diff_s: f64,
    #[arg(long, default_value_t = 2.0)]
    pub max_lag_s: f64,
    /// Minimum normalized correlation peak for an alignment to be accepted.
    #[arg(long, default_value_t = 0.1)]
    pub min_peak: f64,
}

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RebalanceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `genre=fraction` pairs separated by commas, or a JSON file mapping
    /// genres to fractions.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PreviewArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// One of none, swap, stretch, shift, remix, filter, scale, combined.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value = "train")]
    pub part: String,
    #[arg(long, default_value = "two-stem")]
    pub mode: String,
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 30)]
    pub songs: usize,
    #[arg(long, default_value_t = 4.0)]
    pub seconds: f64,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment file (TOML). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// two-stem or four-stem.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Comma-separated augmentation kinds.
    #[arg(long)]
    pub augment: Option<String>,
    #[arg(long)]
    pub augment_probability: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Args)]
pub struct SeparateArgs {
    /// Directory holding `<source>-best.ckpt` files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value = "two-stem")]
    pub mode: String,
    /// A single WAV file to separate.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Separate every track of one split part instead.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub part: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub part: String,
    /// Directory of `<song_id>/<stem>.wav` estimates.
    #[arg(long, conflicts_with = "models", required_unless_present = "models")]
    pub estimates: Option<PathBuf>,
    /// Separate on the fly with these checkpoints instead.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, default_value = "two-stem")]
    pub mode: String,
    /// Label written in the method column.
    #[arg(long, default_value = "model")]
    pub method: String,
    #[arg(long, default_value_t = 1.0)]
    pub frame_s: f64,
    #[arg(long, default_value_t = voxsep::evaluation::DEFAULT_FILTER_LEN)]
    pub filter_len: usize,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Metric CSV files written by `evaluate`.
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: String,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Output directory of a `compare` run.
    #[arg(long)]
    pub from: PathBuf,
    /// Where to write the report; defaults to `--from`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mine(a) => commands::data::mine(a),
        Command::DatasetSplit(a) => commands::data::split(a),
        Command::DatasetRebalance(a) => commands::data::rebalance(a),
        Command::AugmentPreview(a) => commands::data::augment_preview(a),
        Command::MakeToy(a) => commands::data::make_toy(a),
        Command::Train(a) => commands::model::train(a),
        Command::Separate(a) => commands::model::separate(a),
        Command::Evaluate(a) => commands::eval::evaluate(a),
        Command::Compare(a) => commands::eval::compare(a),
        Command::Report(a) => commands::eval::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("voxsep: {failure}");
            ExitCode::from(failure.exit_code() as u8)
        }
    }
}
