mod commands;
mod ranges;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Dataset building, training and evaluation for TSV extrusion morphology.
#[derive(Debug, Parser)]
#[command(name = "tsvmorph", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic mosaic (.wli, PNG render, ground truth) or a labeled via dataset.
    Generate(GenerateArgs),
    /// Turn PNG or WLI files into 8-bit PNGs plus a manifest.
    Import(ImportArgs),
    /// Cut a mosaic into 54x54 crops along an estimated grid.
    Crop(CropArgs),
    /// Expand the train split of a manifest with one of the augmentation types.
    Augment(AugmentArgs),
    /// Train one architecture and save the best-epoch checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Run the architecture x augmentation x dropout grid.
    Sweep(SweepArgs),
    /// Print the layer table of an architecture.
    Describe(DescribeArgs),
    /// Start the labeling HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 4)]
    pub rows: u32,
    #[arg(long, default_value_t = 5)]
    pub cols: u32,
    /// Background pixels between frames and around the border.
    #[arg(long, default_value_t = 6)]
    pub gap: u32,
    /// Emit this many single-via training crops instead of a mosaic.
    #[arg(long)]
    pub vias: Option<usize>,
    /// Held-out crops generated alongside --vias.
    #[arg(long, default_value_t = 0, requires = "vias")]
    pub test_vias: usize,
    #[arg(long, env = "TSVMORPH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Label applied to every imported image.
    #[arg(long)]
    pub label: Option<String>,
    /// Fraction of sources held out as the test split.
    #[arg(long, default_value_t = 0.0)]
    pub test_fraction: f64,
    #[arg(long, env = "TSVMORPH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CropArgs {
    /// Mosaic image, PNG or WLI.
    pub input: PathBuf,
    #[arg(long)]
    pub grid_rows: u32,
    #[arg(long)]
    pub grid_cols: u32,
    /// Foreground threshold in intensity levels above the background.
    #[arg(long, default_value_t = tsvmorph_core::cropper::DEFAULT_THETA)]
    pub theta: f64,
    /// Override the estimated grid origin, as `x,y`.
    #[arg(long, allow_hyphen_values = true)]
    pub offsets: Option<String>,
    /// Override the estimated cell size, as `WxH`.
    #[arg(long)]
    pub cell: Option<String>,
    /// Source name used for crop file names; defaults to the input stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory holding manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "type")]
    pub aug_type: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding manifest.jsonl; synthetic vias are used when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub synthetic_train: usize,
    #[arg(long, default_value_t = 90)]
    pub synthetic_test: usize,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: u32,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 50)]
    pub lr_halve_every: u32,
    /// Stop a run once test accuracy reaches this value.
    #[arg(long)]
    pub stop_at_accuracy: Option<f64>,
    /// Bit-identical results across runs, at the cost of parallelism inside a run.
    #[arg(long)]
    pub strict: bool,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, env = "TSVMORPH_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "vgg_inspired_alexnet")]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub aug: u8,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, env = "TSVMORPH_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// `all` or a comma list of architecture names.
    #[arg(long, default_value = "all")]
    pub archs: String,
    /// Augmentation types, e.g. `0-5` or `0,2`.
    #[arg(long, default_value = "0-5")]
    pub aug: String,
    /// Dropout rates, e.g. `0.0-0.5` or `0.1,0.3`.
    #[arg(long, default_value = "0.0-0.5")]
    pub dropout: String,
    #[arg(long, default_value_t = 0.1)]
    pub dropout_step: f64,
    /// Run cells concurrently (each cell then trains sequentially).
    #[arg(long)]
    pub parallel: bool,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Architecture to describe; all four when omitted.
    #[arg(long)]
    pub arch: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Where sessions, journals and exports are kept.
    #[arg(long, default_value = "tsvmorph-data")]
    pub data_dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
