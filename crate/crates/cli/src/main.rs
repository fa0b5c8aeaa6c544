//! Batch front end for the capacity-fade toolkit.
//!
//! Four workflows, all driven by one TOML config file with CLI overrides:
//! `calibrate` (three-step coefficient fitting), `simulate` (coupled ECM +
//! aging run), `eol` (end-of-life extrapolation), and `analyze` (C-rate/SOC
//! usage histograms).
//!
//! Exit codes: 0 success, 1 input validation, 2 fit failure or
//! non-convergence, 3 simulation/model-validity error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "battfade", version, about = "Battery capacity-fade modeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (TOML); relative paths inside it resolve
    /// against its directory
    #[arg(long, global = true, default_value = "battfade.toml")]
    config: PathBuf,

    /// Output directory (overrides `paths.out_dir` from the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed recorded in report metadata; all fits are deterministic, so the
    /// seed does not change results
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for independent fit units (1 = sequential; results
    /// are identical either way)
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the three-step calibration on the configured datasets
    Calibrate,
    /// Run a coupled ECM + aging simulation and write the fade trajectory
    Simulate,
    /// Extrapolate end of life from a trajectory (given or simulated)
    Eol,
    /// Compute time-weighted C-rate and SOC usage histograms
    Analyze,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = commands::RunContext {
        config_path: cli.config,
        out_override: cli.out,
        seed: cli.seed,
        parallel: cli.parallel.max(1),
    };
    let result = match cli.command {
        Command::Calibrate => commands::calibrate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Eol => commands::eol(&ctx),
        Command::Analyze => commands::analyze(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
