//! `dicl`: batch front end for forecasting, metrics, bound checks, training
//! and policy evaluation.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dicl_core::DiclError;

use config::GlobalArgs;

#[derive(Parser)]
#[command(name = "dicl", version, about = "In-context dynamics forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Roll a forecaster out from each episode's context.
    Forecast,
    /// Multi-step MSE and calibration of forecast outputs.
    Metrics,
    /// Check the multi-branch return bound on random tabular pairs.
    Boundcheck,
    /// Train SAC or DICL-SAC.
    Train,
    /// Hybrid real/forecast policy evaluation.
    Policyeval,
    /// One-at-a-time sensitivity of the native dynamics.
    Sensitivity,
}

fn exit_code(e: &DiclError) -> u8 {
    match e {
        DiclError::Schema(_) | DiclError::Parse { .. } | DiclError::InvalidArgument(_) | DiclError::Json(_) => 2,
        DiclError::Backend { .. } | DiclError::ContextOverflow { .. } => 3,
        DiclError::Numerical(_) | DiclError::Rank { .. } => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> dicl_core::Result<()> {
    if let Some(jobs) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| DiclError::invalid(e.to_string()))?;
    }
    let raw = config::load_raw(cli.global.config.as_deref())?;
    let g = &cli.global;
    match cli.command {
        Command::Forecast => commands::forecast::run(raw, g),
        Command::Metrics => commands::metrics::run(raw, g),
        Command::Boundcheck => commands::boundcheck::run(raw, g),
        Command::Train => commands::train::run(raw, g),
        Command::Policyeval => commands::policyeval::run(raw, g),
        Command::Sensitivity => commands::sensitivity::run(raw, g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
