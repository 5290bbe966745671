//! The `rawlens` command line: configuration, provenance, and subcommands.

pub mod commands;
pub mod config;
pub mod provenance;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rawlens_core::models::ModelKind;

/// Environment variable naming a directory for cached dataset manifests.
pub const CACHE_ENV: &str = "RAWLENS_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "rawlens", version, about = "Lensless camera simulation and raw-video gesture recognition")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML experiment configuration.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set training.epochs=5`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory; replaces `output.dir`.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic gesture dataset.
    Synth(SynthArgs),
    /// Simulate lensless measurements of a directory of scene frames.
    Simulate(FramesArgs),
    /// Apply the configured sampling mask to a directory of frames.
    Downsample(FramesArgs),
    /// ADMM reconstruction of a directory of raw frames.
    Reconstruct(ReconstructArgs),
    /// Train the configured model on the configured dataset.
    Train,
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train and evaluate every configured grid cell.
    Grid(GridArgs),
    /// Embedding pertinence counts and shape/motion error attribution.
    Analyze,
    /// Print the layer table of a model.
    Describe(DescribeArgs),
    /// Print an annotated configuration with every default.
    ExampleConfig,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub sequences_per_class: usize,
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 24)]
    pub max_frames: usize,
    /// Classes to render; all nine by default.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<u8>,
}

#[derive(Debug, Args)]
pub struct FramesArgs {
    /// Directory of frame images, processed in file-name order.
    #[arg(short, long, visible_alias = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub frames: FramesArgs,
    /// PSF image; sets `optics.psf = "file"` and `optics.psf_path`.
    #[arg(long)]
    pub psf: Option<PathBuf>,
    /// Replaces `recon.admm.max_iters`.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Replaces `recon.admm.tv_weight`.
    #[arg(long, value_name = "LAMBDA")]
    pub tv: Option<f64>,
}

impl ReconstructArgs {
    /// The flags as `--set` style overrides, applied after the user's own.
    pub fn overrides(&self) -> anyhow::Result<Vec<String>> {
        let mut out = Vec::new();
        if let Some(p) = &self.psf {
            let abs = std::path::absolute(p)?;
            out.push("optics.psf=\"file\"".to_string());
            out.push(format!("optics.psf_path={}", toml::Value::String(abs.display().to_string())));
        }
        if let Some(n) = self.iters {
            out.push(format!("recon.admm.max_iters={n}"));
        }
        if let Some(tv) = self.tv {
            out.push(format!("recon.admm.tv_weight={tv:e}"));
        }
        Ok(out)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Replaces `model.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Write a frame grid of the first N test clips with their labels.
    #[arg(long, value_name = "N")]
    pub emit_panels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Cells trained at once.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    pub kind: ModelKind,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long)]
    pub reduced: bool,
}

/// Parse `args` and run; the binary maps errors to a non-zero exit.
pub fn run_from_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    commands::run(&cli)
}
