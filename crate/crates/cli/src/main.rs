use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geoflow_cli::runner::{convert_lines, run_scenario, validate_scenario, RunError};
use geoflow_cli::scenario::load;

/// Batch computations for second-order dynamics in geodesic form: declare a
/// scenario in TOML, get connections, trajectories, curvature diagnostics
/// and deterministic CSV output.
#[derive(Parser)]
#[command(name = "geoflow", disable_version_flag = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario and write CSVs plus report.txt.
    Run {
        scenario: PathBuf,
        /// Output directory (created if missing).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Print the derived connection components at the probe point.
    Convert { scenario: PathBuf },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, out } => match run_scenario(&scenario, &out) {
            Ok(report) => {
                print!("{}", report.render());
                if report.all_ok() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(3)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        },
        Command::Validate { scenario } => match validate_scenario(&scenario) {
            Ok(lines) => {
                for line in lines {
                    println!("{line}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Convert { scenario } => match load(&scenario) {
            Ok(sc) => match convert_lines(&sc) {
                Ok(lines) => {
                    for line in lines {
                        println!("{line}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(3)
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Version => {
            println!("geoflow {}", env!("CARGO_PKG_VERSION"));
            ExitCode::SUCCESS
        }
    }
}

fn exit_code(err: &RunError) -> u8 {
    match err {
        RunError::Scenario(_) | RunError::Output { .. } => 2,
    }
}
