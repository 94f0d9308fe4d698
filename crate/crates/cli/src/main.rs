//! `subspectra`: data generation, training, P-vector analytics, experiment
//! presets and the SVD benchmark.

mod commands;
mod repro;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use subspectra_core::{Error, ErrorClass, ReportFormat, SvdMethod};

#[derive(Debug, Parser)]
#[command(
    name = "subspectra",
    version,
    about = "P-vector analysis of toy and exported feature matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a Gaussian-mixture dataset (train and test splits).
    GenData(GenDataArgs),
    /// Train a toy model and store its run directory.
    Train(TrainArgs),
    /// Extract the feature matrix of one checkpoint.
    Extract(ExtractArgs),
    /// Compute the P-vector of a feature matrix.
    Pvector(PvectorArgs),
    /// Angle between two stored P-vectors.
    Angle(AngleArgs),
    /// Pairwise angle grid of stored P-vectors.
    Grid(GridArgs),
    /// Angle of every checkpoint of a run to a reference checkpoint.
    Trajectory(TrajectoryArgs),
    /// Angle of every checkpoint of a run to the data P-vector.
    DataAngle(DataAngleArgs),
    /// Angle to the data P-vector for every hidden layer of a checkpoint.
    PerLayer(PerLayerArgs),
    /// Singular values, explained-variance ratios and reconstruction errors.
    Spectrum(SpectrumArgs),
    /// Value-frequency histogram of a P-vector or feature matrix.
    Histogram(HistogramArgs),
    /// Spearman and Pearson correlation of two columns of a CSV table.
    Correlate(CorrelateArgs),
    /// Rank models by predicted generalization gap.
    PredictGap(PredictGapArgs),
    /// Time exact against randomized SVD on a seeded matrix.
    SvdBench(SvdBenchArgs),
    /// Run an experiment preset.
    Repro(ReproArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Exact,
    Randomized,
}

impl From<MethodArg> for SvdMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => SvdMethod::Exact,
            MethodArg::Randomized => SvdMethod::Randomized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolingArg {
    AcrossEpochs,
    AcrossRuns,
    Unspecified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    H1Grid,
    H2Trajectories,
    H3Correlation,
    Epoch0Zigzag,
    TopkNoconverge,
}

#[derive(Debug, Args)]
struct SvdFlags {
    #[arg(long, value_enum, default_value = "exact")]
    method: MethodArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = subspectra_core::linalg::DEFAULT_OVERSAMPLE)]
    oversample: usize,
    #[arg(long = "power-iters", default_value_t = subspectra_core::linalg::DEFAULT_POWER_ITERS)]
    power_iters: usize,
}

#[derive(Debug, Args)]
struct DataFlags {
    /// Dataset FMAT file.
    #[arg(long = "in", value_name = "FMAT")]
    input: PathBuf,
    /// Labels file; defaults to the dataset path with a `.labels` extension.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutputFlags {
    #[arg(long)]
    out: PathBuf,
    /// Report format; inferred from the `--out` extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long = "n-test", default_value_t = 2000)]
    n_test: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 3.0)]
    spread: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataFlags,
    /// mlp, ae, dae or contrastive.
    #[arg(long, default_value = "mlp")]
    model: String,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    widths: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long = "weight-decay", default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Root directory; the run is stored under `runs/<run_id>/`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CheckpointFlags {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Epoch of the checkpoint; defaults to the well-trained one.
    #[arg(long)]
    epoch: Option<u32>,
    /// Step within epoch 0.
    #[arg(long)]
    iteration: Option<u32>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[command(flatten)]
    ckpt: CheckpointFlags,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Hidden layer index; defaults to the model's feature layer.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PvectorArgs {
    #[arg(long = "in", value_name = "FMAT")]
    input: PathBuf,
    #[command(flatten)]
    svd: SvdFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AngleArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// P-vector JSON files.
    #[arg(long = "in", value_name = "JSON", num_args = 2.., required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct TrajectoryArgs {
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Run holding the reference checkpoint; defaults to `--run`.
    #[arg(long = "reference-run")]
    reference_run: Option<PathBuf>,
    /// Epoch of the reference checkpoint; defaults to the well-trained one.
    #[arg(long = "reference-epoch")]
    reference_epoch: Option<u32>,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct DataAngleArgs {
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct PerLayerArgs {
    #[command(flatten)]
    ckpt: CheckpointFlags,
    #[command(flatten)]
    data: DataFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long = "in", value_name = "FMAT")]
    input: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    /// P-vector JSON or FMAT file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    /// Kernel density bandwidth: `silverman` or a positive number.
    #[arg(long)]
    kde: Option<String>,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    /// CSV table with a header row.
    #[arg(long = "in", value_name = "CSV")]
    input: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long = "log-log")]
    log_log: bool,
    #[arg(long, value_enum, default_value = "unspecified")]
    pooling: PoolingArg,
    /// Column of 0/1 flags counted as degenerate points.
    #[arg(long = "degenerate-column")]
    degenerate_column: Option<String>,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct PredictGapArgs {
    /// Run directories, one per model.
    #[arg(long = "run", num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Training split; the only data the measures read.
    #[command(flatten)]
    data: DataFlags,
    /// Test split, used only for the observed gaps.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long = "test-labels")]
    test_labels: Option<PathBuf>,
    #[arg(long, default_value_t = subspectra_core::analysis::DEFAULT_AGGREGATION_WEIGHT)]
    weight: f64,
    #[arg(long)]
    bins: Option<usize>,
    /// Seed of the pseudo-validation augmentation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Debug, Args)]
struct SvdBenchArgs {
    #[arg(long, default_value_t = 20000)]
    rows: usize,
    #[arg(long, default_value_t = 256)]
    cols: usize,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = subspectra_core::linalg::DEFAULT_OVERSAMPLE)]
    oversample: usize,
    #[arg(long = "power-iters", default_value_t = subspectra_core::linalg::DEFAULT_POWER_ITERS)]
    power_iters: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproArgs {
    #[arg(value_enum)]
    preset: Preset,
    /// Training seeds; defaults to 1..5.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// What a successful command reports.
pub struct Outcome {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 1,
        ErrorClass::Io => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(out) => {
            println!("{}", out.summary);
            for a in &out.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
