//! Command-line front end: scenario ingestion, pipeline orchestration,
//! artifact persistence, and report emission.
//!
//! Exit codes: 0 success, 2 infeasible design or failed verification,
//! 3 schema/configuration error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "platoon-codesign",
    about = "Co-design of distributed controllers and communication topologies for vehicle platoons",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize controllers and a communication topology from a scenario
    /// configuration, writing a result file.
    Synthesize {
        /// Scenario configuration (JSON, see schemas/scenario.schema.json).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the configuration's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the design mode: centralized | decentralized.
        #[arg(long)]
        mode: Option<String>,
        /// Override the error formulation: I | II.
        #[arg(long)]
        formulation: Option<String>,
        /// Decentralized only: force a strictly decreasing per-vehicle gain
        /// sequence along the platoon.
        #[arg(long, default_value_t = false)]
        string_stability: bool,
    },
    /// Simulate a stored design against a scenario, writing the trace CSV,
    /// SVG plots, and a metrics summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Result file produced by `synthesize`.
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Accept a result produced by a different configuration.
        #[arg(long, default_value_t = false)]
        force: bool,
    },
    /// Re-verify a stored result: gain structure, index boxes, gain bound,
    /// closed-loop stability, network re-analysis, and weak coupling.
    Check {
        #[arg(long)]
        result: PathBuf,
    },
    /// End-to-end demonstration: write the default scenario, synthesize both
    /// modes, simulate the centralized design, and verify the results.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synthesize {
            config,
            out,
            mode,
            formulation,
            string_stability,
        } => commands::cmd_synthesize(&config, out, mode, formulation, string_stability),
        Command::Simulate {
            config,
            result,
            out,
            seed,
            force,
        } => commands::cmd_simulate(&config, &result, out, seed, force),
        Command::Check { result } => commands::cmd_check(&result),
        Command::Demo { out, seed } => commands::cmd_demo(out, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
