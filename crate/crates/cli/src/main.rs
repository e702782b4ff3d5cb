//! `peee` command line: fit a dataset with an incompletely observed column,
//! reproduce the simulation studies, or benchmark closed-form variance
//! estimation against the bootstrap.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod bench;
mod fit;
mod output;
mod simulate;

use clap::{Parser, Subcommand};
use peee_core::ErrorClass;

#[derive(Parser)]
#[command(name = "peee", version, about = "Estimation with missing-at-random data via pseudo-expected estimating equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an analysis model to a delimited file with one incomplete column.
    Fit(Box<fit::FitArgs>),
    /// Run a replicated simulation study from a config file.
    Simulate(simulate::SimulateArgs),
    /// Time closed-form variance estimation against the bootstrap.
    Bench(bench::BenchArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(1);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => fit::run(&args),
        Command::Simulate(args) => simulate::run(&args),
        Command::Bench(args) => bench::run(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numerical => 3,
        };
        std::process::exit(code);
    }
}
