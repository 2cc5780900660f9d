use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use manistream::SimMode;

#[derive(Debug, Parser)]
#[command(name = "manistream", version, about = "Multi-manifold learning from streaming data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (bench defaults to 1, everything else to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene as CSV.
    Generate(GenerateArgs),
    /// Fit a model on a batch CSV and save it to a directory.
    Fit(FitArgs),
    /// Map a stream CSV through a saved model.
    Stream(StreamArgs),
    /// Score a model against ground truth.
    Eval(EvalArgs),
    /// Time stream mapping over increasing stream sizes.
    Bench(BenchArgs),
    /// Export embedding and profile data for plots.
    Figure(FigureArgs),
}

/// Model parameters; anything left unset comes from `--config` or the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamFlags {
    /// JSON file with model parameters (or a previous run.json).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    pub sim_mode: Option<SimMode>,
    #[arg(long)]
    pub knn: Option<usize>,
    /// Nearest cross-cluster pairs kept for stitching.
    #[arg(long)]
    pub k: Option<usize>,
    /// Farthest cross-cluster pairs kept for stitching.
    #[arg(long)]
    pub l: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub d_global: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub gap_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<SimMode, String> {
    s.parse().map_err(|e: manistream::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scene kind, e.g. swiss_roll_plane.
    #[arg(long)]
    pub scene: String,
    /// Component sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV (the batch when --batch-size is given).
    #[arg(long)]
    pub out: PathBuf,
    /// Split off a batch of this size; the rest goes to --stream-out.
    #[arg(long, requires = "stream_out")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stream_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Model directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-cluster rotations, offsets and means as JSON.
    #[arg(long)]
    pub dump_alignment: Option<PathBuf>,
    #[command(flatten)]
    pub params: ParamFlags,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    /// Stream assignment against the labels in --in.
    Accuracy,
    /// Stream global coordinates against --truth.
    Procrustes,
    /// Batch clustering against the labels in --in.
    Clustering,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Generating coordinates, one row per sample of --in.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    pub sizes: Vec<usize>,
    /// Timing CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional report JSON with the latency ratio and linear fit.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FigureKind {
    /// Batch embeddings over a sweep of ridge strengths.
    Lambda,
    /// Batch embeddings over a sweep of nearest-pair counts.
    K,
    /// Batch embeddings over a sweep of farthest-pair counts.
    L,
    /// Cluster labels on the scene points.
    Clusters,
    /// Singular-value profile of one sample over all radii.
    Msvd,
    /// Stream global coordinates next to the ground truth.
    Recreation,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long, value_enum)]
    pub kind: FigureKind,
    #[arg(long, default_value = "swiss_roll_plane")]
    pub scene: String,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Sweep values (lambda, k and l figures).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Batch size for the recreation figure.
    #[arg(long, default_value_t = 2000)]
    pub batch_size: usize,
    /// Sample whose profile the msvd figure records.
    #[arg(long, default_value_t = 0)]
    pub point: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamFlags,
}
