//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 validation or metric failure, 2 generation or
//! extraction failure, 64 usage error.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{DatasetProfile, RunConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "vastree",
    version,
    about = "Synthetic vessel trees, tree decoding and minimal-path baselines"
)]
pub struct Cli {
    /// TOML or JSON configuration file (`.json` selects JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; overrides the config file and VASTREE_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow, render and write a synthetic dataset.
    Generate(GenerateArgs),
    /// Render a tree file to an image.
    Render(RenderArgs),
    /// Decode a tree from an image and its keypoints.
    Extract(ExtractArgs),
    /// Minimal-path baseline on a ground-truth tree.
    Baseline(BaselineArgs),
    /// Hausdorff and Chamfer distances of predictions against ground truth.
    Eval(EvalArgs),
    /// Mean metrics over a grid of temperatures and sample counts.
    Sweep(SweepArgs),
    /// Draw a tree on top of an image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    /// Grow in a slab and project, producing crossings.
    #[arg(long)]
    pub slab: bool,
    /// Skip the PNG copies of the images.
    #[arg(long)]
    pub no_png: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub tree: PathBuf,
    /// `.png` or `.f32`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub noise_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Image as `.f32` or `.png`.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub keypoints: PathBuf,
    /// Output tree JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// `exact`, `noisy`, `heuristic` or `cmd:<shell command>`.
    #[arg(long)]
    pub scorer: Option<String>,
    /// Ground-truth tree for the oracle scorers.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n_dec: Option<usize>,
    /// Root keypoint index; overrides the keypoints file.
    #[arg(long)]
    pub root: Option<usize>,
    /// Also write every sampled tree to this directory.
    #[arg(long)]
    pub samples_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Ground-truth tree supplying the mask and the endpoints.
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub snap_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Directory receiving `report.csv` and `report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scorer: Option<String>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    /// Comma-separated sample counts.
    #[arg(long, value_delimiter = ',')]
    pub n_decs: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    /// `.png` or `.f32`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("vastree: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::load(cli.config.as_deref(), std::env::var(SEED_ENV).ok())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start {} workers: {e}", cli.jobs)))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Render(a) => commands::render(cfg, a),
        Command::Extract(a) => commands::extract(cfg, a),
        Command::Baseline(a) => commands::baseline(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Sweep(a) => commands::sweep(cfg, a),
        Command::Overlay(a) => commands::overlay(cfg, a),
    })
}
