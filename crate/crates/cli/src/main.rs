//! `drfb`: gain synthesis, simulation, crossover estimation and bound
//! reporting for a disproportionation redox flow battery.
//!
//! Exit codes: 0 success, 1 configuration or validation error,
//! 2 infeasible synthesis, 3 observer divergence.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use commands::{CrossoverMode, ObserveArgs, SimulateArgs};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "drfb", version, about = "Adaptive crossover observer toolkit for DRFB cells")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the LMI program and write gains plus `<out>.bounds.json`.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forward simulation of open-circuit self-discharge.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = CrossoverMode::Linear)]
        mode: CrossoverMode,
        #[arg(long)]
        out: PathBuf,
        /// Also write the voltage telemetry CSV for `observe`.
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Overrides `run.seed` for voltage noise.
        #[arg(long)]
        seed: Option<u64>,
        /// Output spacing [s]; overrides `run.dt`.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Run the observer over a telemetry CSV.
    Observe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Resample the trace to this step [s] before estimation.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Print the bound constants and radii as JSON.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        gains: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synthesize { config, out } => commands::synthesize_cmd(config, out),
        Command::Simulate { config, mode, out, trace_out, seed, dt } => commands::simulate_cmd(&SimulateArgs {
            config,
            mode: *mode,
            out,
            trace_out: trace_out.as_deref(),
            seed: *seed,
            dt: *dt,
        }),
        Command::Observe { config, gains, trace, out, svg, dt } => commands::observe_cmd(&ObserveArgs {
            config,
            gains,
            trace,
            out,
            svg: svg.as_deref(),
            dt: *dt,
        }),
        Command::Bounds { config, gains } => commands::bounds_cmd(config, gains).map(|json| println!("{json}")),
    };
    match result {
        Ok(()) => ExitCode::from(commands::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
