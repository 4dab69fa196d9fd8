//! Thin command-line front end; the library does the work.

use boltzgas::cli::{self, RunOverrides};
use boltzgas::scenario::Scenario;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "boltzgas",
    about = "Deterministic solver and verification suite for the inelastic Boltzmann equation with near-vacuum data"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check restitution-model admissibility (continuity, monotonicity of
    /// theta, angular integrability) for the scenario's model.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the envelope constant, the small-data threshold and the
    /// measured initial norm; exit 1 if the datum is too large.
    Threshold {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the monotone iteration and write run artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for report and CSV artifacts.
        #[arg(long, default_value = "run-out")]
        out: PathBuf,
        /// Worker threads (defaults to available parallelism).
        #[arg(long)]
        workers: Option<usize>,
        /// Attempt the run even above the small-data threshold (uncertified).
        #[arg(long)]
        override_threshold: bool,
        /// Iteration tolerance override.
        #[arg(long)]
        tol: Option<f64>,
        /// Iteration budget override.
        #[arg(long)]
        max_iter: Option<usize>,
    },
}

fn main() {
    let args = Args::parse();
    let code = match run(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                boltzgas::Error::Config { .. } | boltzgas::Error::Json(_) | boltzgas::Error::Io(_) => {
                    cli::EXIT_CONFIG
                }
                boltzgas::Error::ThresholdExceeded { .. } => cli::EXIT_VERDICT,
                boltzgas::Error::ConvergenceFailure { .. } => cli::EXIT_NO_CONVERGENCE,
                _ => cli::EXIT_CONFIG,
            }
        }
    };
    std::process::exit(code);
}

fn run(args: Args) -> boltzgas::Result<i32> {
    let mut stdout = std::io::stdout();
    match args.command {
        Command::Check { config } => {
            let scenario = Scenario::from_file(&config)?;
            cli::cmd_check(&scenario, &mut stdout)
        }
        Command::Threshold { config } => {
            let scenario = Scenario::from_file(&config)?;
            cli::cmd_threshold(&scenario, &mut stdout)
        }
        Command::Run {
            config,
            out,
            workers,
            override_threshold,
            tol,
            max_iter,
        } => {
            let scenario = Scenario::from_file(&config)?;
            let overrides = RunOverrides {
                tol,
                max_iter,
                override_threshold,
                workers,
            };
            cli::cmd_run(&scenario, &out, &overrides, &mut stdout)
        }
    }
}
