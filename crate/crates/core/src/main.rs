use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spindle::pipeline::{self, Ctx, LoadedConfig};

/// Recurring oscillatory state discovery for long quasi-stationary
/// time series: multitaper spectral observations, a nonparametric HMM
/// fitted by beam sampling, cross-subject state clustering, and scoring
/// against reference stage annotations.
#[derive(Parser)]
#[command(name = "spindle", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic recording with known ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Extract per-window multitaper band observations.
    Spectra {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to one subject id.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Fit the nonparametric HMM by beam sampling.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        subject: Option<String>,
        /// Continue from the subject's checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Cluster discovered states across subjects.
    Cluster {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Score trajectories and emit the report bundle.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the whole pipeline on a built-in synthetic fixture.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        quiet: bool,
    },
}

fn run() -> spindle::Result<()> {
    match Cli::parse().command {
        Command::Simulate { config, quiet } => {
            let ctx = Ctx::new(LoadedConfig::from_path(&config)?, quiet);
            pipeline::cmd_simulate(&ctx)
        }
        Command::Spectra { config, subject, quiet } => {
            let ctx = Ctx::new(LoadedConfig::from_path(&config)?, quiet);
            pipeline::cmd_spectra(&ctx, subject.as_deref())
        }
        Command::Infer { config, subject, resume, quiet } => {
            let ctx = Ctx::new(LoadedConfig::from_path(&config)?, quiet);
            pipeline::cmd_infer(&ctx, subject.as_deref(), resume)
        }
        Command::Cluster { config, quiet } => {
            let ctx = Ctx::new(LoadedConfig::from_path(&config)?, quiet);
            pipeline::cmd_cluster(&ctx)
        }
        Command::Report { config, subject, quiet } => {
            let ctx = Ctx::new(LoadedConfig::from_path(&config)?, quiet);
            pipeline::cmd_report(&ctx, subject.as_deref())
        }
        Command::Demo { out, seed, quiet } => pipeline::cmd_demo(&out, seed, quiet),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
