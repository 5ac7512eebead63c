//! `ptych`: simulate subsampled Fourier-ptychography measurements,
//! reconstruct with classical and generative solvers, and reproduce the
//! benchmark tables and SSIM curves.

mod bench;
mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ptych", version, about = "Subsampled Fourier ptychography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Iera,
    Sparse,
    Untrained,
    Invertible,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement set from a grayscale PNG.
    Simulate {
        /// Input image (8-bit grayscale PNG, square power-of-two size).
        #[arg(long)]
        image: PathBuf,
        /// Cameras per grid side (total cameras = grid^2).
        #[arg(long, default_value_t = 5)]
        grid: usize,
        /// Pupil radius in pixels (default: image side / 8).
        #[arg(long)]
        radius: Option<f64>,
        /// Pupil center spacing in pixels (default: ~60% area overlap).
        #[arg(long)]
        spacing: Option<f64>,
        /// Subsampling ratio in percent, (0, 100].
        #[arg(long, default_value_t = 100.0)]
        ratio: f64,
        /// Gaussian noise level in percent of full scale.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Master seed; mask and noise streams are derived from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from a stored measurement set.
    Reconstruct {
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Flow checkpoint directory (required for --method invertible).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Method configuration file (key = value).
        #[arg(long)]
        config: PathBuf,
        /// Ground-truth PNG for metrics.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM between two images (PNG or PTYF, by extension).
    Metrics {
        reference: PathBuf,
        candidate: PathBuf,
    },
    /// Train the toy invertible flow on a directory of PNG images.
    TrainFlow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a benchmark grid and emit rows, aggregate and SSIM-curve CSVs.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic test images (fallback set or datasets).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// `set` emits the five-image fallback set; other kinds emit
        /// `--count` seeded images.
        #[arg(long, default_value = "set")]
        kind: String,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> anyhow::Result<()> {
    ptych_core::threads::init_pool_from_env();
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { image, grid, radius, spacing, ratio, noise, seed, out } => {
            commands::simulate(&image, grid, radius, spacing, ratio, noise, seed, &out)
        }
        Command::Reconstruct { measurements, method, model, config, truth, out } => {
            commands::reconstruct(&measurements, method, model.as_deref(), &config, truth.as_deref(), &out)
        }
        Command::Metrics { reference, candidate } => commands::metrics(&reference, &candidate),
        Command::TrainFlow { config, data, out } => commands::train_flow(&config, &data, &out),
        Command::Bench { spec, out } => bench::run(&spec, &out),
        Command::Synth { out, size, kind, count, seed } => {
            commands::synth(&out, size, &kind, count, seed)
        }
    }
}
