//! `airls`: solve multiaffine maximum-likelihood problems, estimate
//! covariances, generate test problems and export benchmark curves.

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

mod commands;
mod failure;
mod files;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchmarkArgs, GenerateArgs, SolveArgs, VarianceArgs};
use failure::{CliResult, Failure};

const AFTER_HELP: &str = "\
Exit codes:
  0  success, including runs that stop at --max-sweeps
  1  an output file could not be written
  2  parse or validation error in the arguments or input files
  3  numerical failure

Environment:
  AIRLS_THREADS  maximum number of worker threads
  RUST_LOG       log filter (default: warn)";

#[derive(Parser, Debug)]
#[command(name = "airls", version, about, after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run AIRLS on a problem file.
    Solve(SolveArgs),
    /// Estimate the covariance of one block at a solution.
    Variance(VarianceArgs),
    /// Reproduce a figure at desk scale and write one CSV per curve.
    Benchmark(BenchmarkArgs),
    /// Write a generated problem file and its ground truth.
    Generate(GenerateArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = commands::threads_from_env(std::env::var("AIRLS_THREADS").ok())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::output)?;
    }
    match &cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Variance(a) => commands::variance(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Generate(a) => commands::generate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
