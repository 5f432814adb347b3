use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spi_cli::commands::{self, CommandError};
use spi_cli::config::ExperimentConfig;
use spi_cli::experiment::SweepKind;

/// Sensor parameter identification for trajectory estimation: minimal
/// query rates and loosest covariances meeting an accuracy target, with
/// end-to-end simulation validation.
#[derive(Parser)]
#[command(name = "spi", version)]
struct Cli {
    /// Path to the experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.directory from the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed (overrides trials.base_seed from the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for experiment sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the minimal sensor query schedule per accuracy value.
    Schedule,
    /// Solve for the loosest sensor covariance per accuracy value.
    Covariance,
    /// Emit the predictive-bound trace at the resolved schedule.
    PcrbTrace,
    /// Sample one trial's ground truth and measurements to CSV.
    Simulate,
    /// Batch MAP estimation over a measurement CSV.
    Estimate {
        /// Measurement file (default: <out>/measurements.csv).
        #[arg(long)]
        measurements: Option<PathBuf>,
        /// Ground-truth file for RMSE (default: <out>/trajectory.csv if present).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run a full sweep: solve, simulate, estimate, evaluate.
    Experiment {
        #[arg(value_enum)]
        kind: SweepArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    RateSweep,
    CovarianceSweep,
}

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| "--config <path> is required".to_string())?;
    let text = fs::read_to_string(path).map_err(|e| format!("read {}: {e}", path.display()))?;
    ExperimentConfig::from_json(&text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));

    let result = match &cli.command {
        Command::Schedule => commands::cmd_schedule(&cfg, &out_dir, cli.seed),
        Command::Covariance => commands::cmd_covariance(&cfg, &out_dir, cli.seed),
        Command::PcrbTrace => commands::cmd_pcrb_trace(&cfg, &out_dir, cli.seed),
        Command::Simulate => commands::cmd_simulate(&cfg, &out_dir, cli.seed),
        Command::Estimate {
            measurements,
            truth,
        } => commands::cmd_estimate(&cfg, &out_dir, measurements.as_deref(), truth.as_deref()),
        Command::Experiment { kind } => {
            let kind = match kind {
                SweepArg::RateSweep => SweepKind::RateSweep,
                SweepArg::CovarianceSweep => SweepKind::CovarianceSweep,
            };
            commands::cmd_experiment(&cfg, kind, &out_dir, cli.seed, cli.jobs)
        }
    };

    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            // Infeasibility is a first-class answer for single solves.
            let single_solve = matches!(cli.command, Command::Schedule | Command::Covariance);
            if single_solve && outcome.any_infeasible {
                eprintln!("one or more accuracy targets are infeasible (see report)");
                ExitCode::from(EXIT_INFEASIBLE)
            } else {
                ExitCode::from(EXIT_OK)
            }
        }
        Err(CommandError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CommandError::Runtime(m)) => {
            eprintln!("runtime error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
