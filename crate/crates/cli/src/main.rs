//! `stormseg`: synthesize, label, train, evaluate and run cyclone ROI models.

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stormseg::Error;

#[derive(Debug, Parser)]
#[command(name = "stormseg", version, about = "Cyclone region-of-interest segmentation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// `key = value` run configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named configuration: ibtracs-gfs, heuristic-gfs, ibtracs-goes or heuristic-goes.
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Random seed, overriding the configuration.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Probability threshold used for accuracy and hard counts.
    #[arg(long, global = true, value_name = "F")]
    pub threshold: Option<f64>,
    /// Output location (directory, or file for `split`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run single-threaded.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of frames and cyclone labels.
    Synth(SynthArgs),
    /// Rasterize cyclone labels into truth masks.
    Rasterize(RasterizeArgs),
    /// Assign samples to train/validation/test splits by year.
    Split(SplitArgs),
    /// Train a U-Net and write its checkpoint and loss history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Predict probabilities and extract ROIs for every stackable frame.
    Infer(InferArgs),
    /// Time single-frame and month-long inference.
    Bench(BenchArgs),
    /// Print the effective configuration as `key = value` lines.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// List the documented keys instead.
    #[arg(long)]
    pub keys: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenes, assigned to years round-robin.
    #[arg(long, value_name = "N")]
    pub scenes: usize,
    /// Comma-separated years the scenes are dated in.
    #[arg(long, value_name = "YEARS", value_delimiter = ',', default_value = "2015,2016,2017")]
    pub years: Vec<i32>,
    /// Grid width and height in pixels.
    #[arg(long, value_name = "PIXELS", default_value_t = 128)]
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridChoice {
    /// The grid of each frame in the data directory.
    Frames,
    /// The global half-degree GFS grid, one mask per label timestamp.
    Gfs,
}

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Label CSV; defaults to DIR/labels.csv.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "frames")]
    pub grid: GridChoice,
    /// Box size in pixels.
    #[arg(long = "box", value_name = "PIXELS")]
    pub box_size: Option<usize>,
    /// Minimum wind in knots, or `none`.
    #[arg(long, value_name = "KT")]
    pub wind_min: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "YEARS", value_delimiter = ',')]
    pub train_years: Option<Vec<i32>>,
    #[arg(long, value_name = "YEARS", value_delimiter = ',')]
    pub val_years: Option<Vec<i32>>,
    #[arg(long, value_name = "YEARS", value_delimiter = ',')]
    pub test_years: Option<Vec<i32>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Split table; defaults to DIR/split.csv, else the configured years.
    #[arg(long, value_name = "PATH")]
    pub split: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "F")]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Human,
    Kv,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Split table; defaults to DIR/split.csv, else the configured years.
    #[arg(long, value_name = "PATH")]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Also report Dice and Tversky from thresholded counts.
    #[arg(long)]
    pub binarized: bool,
    #[arg(long, value_enum, default_value = "both")]
    pub format: ReportFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlayChoice {
    None,
    Boxes,
    Probability,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Directory of .f32grid frames.
    #[arg(long, value_name = "DIR")]
    pub frames: PathBuf,
    /// ROI confidence threshold.
    #[arg(long, value_name = "F")]
    pub tau: Option<f64>,
    /// Smallest ROI in pixels.
    #[arg(long, value_name = "PIXELS")]
    pub min_area: Option<usize>,
    #[arg(long, value_enum, default_value = "boxes")]
    pub overlay: OverlayChoice,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Frames to time individually.
    #[arg(long, value_name = "N", default_value_t = 10)]
    pub n: usize,
    /// Also time a full month of frames instead of extrapolating.
    #[arg(long)]
    pub month: bool,
    /// Frame height; defaults to the model's input height.
    #[arg(long, value_name = "PIXELS")]
    pub height: Option<usize>,
    /// Frame width; defaults to the model's input width.
    #[arg(long, value_name = "PIXELS")]
    pub width: Option<usize>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parameter(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
