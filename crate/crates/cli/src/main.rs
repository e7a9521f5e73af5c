//! `ads`: benchmark generation, experiments, sweeps and the annotation service.

mod commands;
mod output;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use ads_core::experiment::Setting;
use ads_core::synth::Preset;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ads", version, about = "Active data-sharing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the commands that run experiments.
#[derive(Debug, Clone, Args)]
struct Common {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Experiment configuration, JSON or TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic multi-machine benchmark.
    Generate {
        /// Generator configuration, JSON or TOML. Overrides --preset and --scale.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "default")]
        preset: Preset,
        /// Multiplies every per-machine sample count.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one setting.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        setting: Option<Setting>,
        #[arg(long)]
        cycles: Option<usize>,
        #[arg(long)]
        per_cycle: Option<usize>,
        /// Total number of queried samples.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Run all five settings and write a comparison table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Seeds per setting, counting up from the base seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Minimum number of seeds for the random-pick settings.
        #[arg(long, default_value_t = 10)]
        random_seeds: u64,
    },
    /// Sweep the filter, budget and initial fraction over samples per cycle.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Comma-separated samples per cycle; defaults to the standard sixteen.
        #[arg(long, value_delimiter = ',')]
        per_cycle: Option<Vec<usize>>,
        /// Grid cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Serve the annotation API and run the loop with a human oracle.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Seconds without a label before the run is checkpointed and the server stops.
        #[arg(long)]
        idle_timeout: Option<u64>,
    },
    /// Finite-difference audit of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render comparison tables from stored reports.
    Report {
        /// Directory searched recursively for report.json and sweep.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
