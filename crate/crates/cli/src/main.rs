//! `attnspec` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use attnspec::detector::FiedlerVariant;
use attnspec::{Cutoff, SignalAlignment};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{OutputFormat, PartialConfig, Precision};

const EXIT_VALIDATION: u8 = 1;
const EXIT_SWEEP_FAILED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "attnspec", version, about = "Graph-spectral diagnostics for transformer attention captures")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file; flags take precedence over its values
    #[arg(long, global = true, env = "ATTNSPEC_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(flatten)]
    settings: SettingFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    #[value(name = "fiedler_norm")]
    Normalized,
    #[value(name = "fiedler_unnorm")]
    Unnormalized,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlignmentArg {
    Input,
    Output,
}

#[derive(Debug, Args, Default)]
struct SettingFlags {
    /// Comma-separated convex head weights
    #[arg(long, global = true, value_delimiter = ',')]
    head_weights: Option<Vec<f64>>,
    /// HFER cutoff: an integer index or a fraction of N such as 0.5
    #[arg(long, global = true)]
    hfer_cutoff: Option<Cutoff>,
    #[arg(long, global = true)]
    fiedler_variant: Option<VariantArg>,
    #[arg(long, global = true)]
    signal_alignment: Option<AlignmentArg>,
    /// Edge threshold for connectivity and MAD
    #[arg(long, global = true)]
    edge_threshold: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Baseline band half-width in standard deviations
    #[arg(long, global = true)]
    band_multiplier: Option<f64>,
    #[arg(long, global = true)]
    format: Option<OutputFormat>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
}

impl SettingFlags {
    fn partial(&self) -> PartialConfig {
        PartialConfig {
            head_weights: self.head_weights.clone(),
            hfer_cutoff: self.hfer_cutoff,
            fiedler_variant: self.fiedler_variant.map(|v| match v {
                VariantArg::Normalized => FiedlerVariant::Normalized,
                VariantArg::Unnormalized => FiedlerVariant::Unnormalized,
            }),
            signal_alignment: self.signal_alignment.map(|a| match a {
                AlignmentArg::Input => SignalAlignment::Input,
                AlignmentArg::Output => SignalAlignment::Output,
            }),
            edge_threshold: self.edge_threshold,
            seed: self.seed,
            band_multiplier: self.band_multiplier,
            format: self.format,
            precision: self.precision,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer diagnostics of one capture
    Analyze {
        capture: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Baseline bands from factual runs
    Baseline {
        #[command(subcommand)]
        command: BaselineCommand,
    },
    /// Classify one capture or report with a fitted model
    Detect {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fit detector statistics and thresholds
    Fit {
        #[arg(long)]
        factual: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Held-out runs to evaluate the fitted model on
        #[arg(long)]
        test: Option<PathBuf>,
        /// Choose the firing direction per domain from calibration accuracy
        #[arg(long)]
        auto_direction: bool,
        /// Threshold for domains without two-class calibration data
        #[arg(long, default_value_t = attnspec::detector::DEFAULT_THRESHOLD)]
        default_threshold: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Group comparisons
    Stats {
        #[command(subcommand)]
        command: StatsCommand,
    },
    /// Seeded numerical verification of the spectral bounds
    Verify {
        #[arg(long, default_value_t = 500)]
        sweeps: usize,
        #[arg(long, default_value_t = 64)]
        max_nodes: usize,
        #[arg(long, default_value_t = 16)]
        max_dim: usize,
        #[arg(long, default_value_t = 256)]
        eigen_max_nodes: usize,
        #[arg(long, default_value_t = 0.5)]
        min_correlation: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Per-layer CSV of a report or capture
    PlotData {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum BaselineCommand {
    Build {
        dir: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum StatsCommand {
    /// Effect of group B relative to group A, per layer and metric
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

pub enum Failure {
    Validation(anyhow::Error),
    SweepFailed,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Validation(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::SweepFailed) => ExitCode::from(EXIT_SWEEP_FAILED),
    }
}
