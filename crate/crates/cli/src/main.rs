mod analyze;
mod commands;
mod compare;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chunkpipe::nn::LayerKind;
use config::{GenSpec, Mode};

#[derive(Parser, Debug)]
#[command(name = "chunkpipe", version, about = "Simulate graph-parallel, pipelined and hybrid full-graph GNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Partition a dataset and write part/chunk assignment files.
    Partition(PartitionArgs),
    /// Train a model and write metrics, trace, traffic report and checkpoint.
    Train(TrainArgs),
    /// Closed-form volumes, depth sweeps, crossover and measured-vs-predicted reports.
    Analyze(AnalyzeArgs),
    /// Compare the metrics of finished runs.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Stochastic block model with BLOCKSxSIZE vertices.
    #[arg(long, value_name = "BLOCKSxSIZE", conflicts_with = "er")]
    sbm: Option<String>,
    /// Erdős–Rényi graph G(N, P).
    #[arg(long, num_args = 2, value_names = ["N", "P"])]
    er: Option<Vec<String>>,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.005)]
    p_out: f64,
    /// Standard deviation of the SBM feature noise.
    #[arg(long, default_value_t = chunkpipe::graph::DEFAULT_FEATURE_NOISE)]
    noise: f64,
    /// Feature columns of an ER dataset.
    #[arg(long, default_value_t = 16)]
    features: usize,
    /// Classes of an ER dataset.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[arg(long, conflicts_with = "gen")]
    dataset: Option<PathBuf>,
    /// Generator spec, e.g. sbm:4x100:0.1:0.005 or er:1000:0.01.
    #[arg(long)]
    gen: Option<GenSpec>,
    #[arg(long)]
    parts: usize,
    /// Also write a chunk plan with this many chunks.
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Every field overrides the config file, which overrides the defaults.
#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    gen: Option<GenSpec>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    model: Option<LayerKind>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    chunks: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    shuffle: Option<bool>,
    #[arg(long)]
    fix_alpha: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    historical_grads: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    synchronous: Option<bool>,
    /// Single-threaded round-robin scheduling (`--deterministic false` runs one thread per worker).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long)]
    workers_per_node: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    trace: Option<bool>,
    #[arg(long)]
    partition: Option<PathBuf>,
    #[arg(long)]
    chunk_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Mode of the closed-form volume.
    #[arg(long, value_enum, default_value = "pipeline")]
    mode: Mode,
    /// Fill N, H and alpha from a reference dataset (squirrel, physics, flickr, reddit).
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    layers: Option<u64>,
    #[arg(long)]
    hidden: Option<u64>,
    #[arg(long)]
    stages: Option<u64>,
    #[arg(long)]
    ways: Option<u64>,
    /// Replication factor of the graph-parallel partition.
    #[arg(long)]
    alpha: Option<f64>,
    /// Model whose boundary vectors are counted (gcnii carries two).
    #[arg(long)]
    model: Option<LayerKind>,
    /// Comma-separated depths, e.g. 8,16,32,64,128.
    #[arg(long, value_delimiter = ',')]
    sweep_depth: Vec<u64>,
    /// Compare the three modes and report the binding inequalities.
    #[arg(long)]
    crossover: bool,
    /// Replication factor inside each hybrid group (defaults to alpha / 2).
    #[arg(long)]
    alpha_hybrid: Option<f64>,
    #[arg(long)]
    stages_hybrid: Option<u64>,
    #[arg(long)]
    ways_hybrid: Option<u64>,
    /// Run directories whose measured traffic and bubble are checked against the closed forms.
    #[arg(long)]
    run: Vec<PathBuf>,
    /// Directory for report.csv and depth_sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Run directories containing metrics.csv.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Fail unless all metrics files are identical apart from the mode column.
    #[arg(long)]
    identical: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a).map(|()| true),
        Command::Partition(a) => commands::partition(a).map(|()| true),
        Command::Train(a) => commands::train(a).map(|()| true),
        Command::Analyze(a) => analyze::run(a).map(|()| true),
        Command::Compare(a) => compare::run(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // `compare --identical` found a difference.
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 3 })
        }
    }
}
