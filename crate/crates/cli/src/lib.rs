//! Command-line pipeline: simulate, project, densify, train, synthesize,
//! fuse and evaluate, each stage writing files plus a `run.json` record.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{run, ModelGan};
pub use config::PipelineConfig;
pub use error::{CliError, ErrorKind, Result};

#[derive(Debug, Parser)]
#[command(name = "depthvision", version, about = "LiDAR-to-image synthesis and luminance-aware fusion")]
pub struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Emit progress as JSON lines on standard error.
    #[arg(long, global = true)]
    pub json_logs: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Project a point cloud into a sparse depth map.
    Project(ProjectArgs),
    /// Fill a sparse depth map by nearest-neighbour interpolation.
    Densify(DensifyArgs),
    /// Train the generator, discriminator and refiner.
    Train(TrainArgs),
    /// Synthesize an RGB image from a sparse depth map.
    Synth(SynthArgs),
    /// Blend a camera image with a synthesized image.
    Fuse(FuseArgs),
    /// Score an endpoint on the dataset's questions.
    Evaluate(EvaluateArgs),
    /// Project, synthesize and fuse one scene in a single call.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub night_fraction: Option<f64>,
    #[arg(long)]
    pub night_ambient: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Side of the centred square crop.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DensifyArgs {
    /// Sparse depth map (`.dvim`).
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or its `manifest.json`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Square generator resolution.
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Sparse depth map (`.dvim`).
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Camera image (PNG).
    #[arg(long)]
    pub rgb: PathBuf,
    /// Synthesized image (`.dvim` or PNG).
    #[arg(long)]
    pub gan: PathBuf,
    /// Calibration used to crop the camera image to the synthesized size.
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// `full` or `pixelwise`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory or its `manifest.json`.
    #[arg(long, alias = "dataset")]
    pub manifest: PathBuf,
    /// `camera`, `full` or `pixelwise`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Trained weights; required by the fusion modes.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Scene directory holding `cloud.bin` and `calib.json`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Camera image; defaults to the scene's `rgb.png`.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub crop: Option<usize>,
    /// `full` or `pixelwise`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}
