use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multiadmm_cli::commands;
use multiadmm_cli::config::{Overrides, RunConfig};

/// Multiblock ADMM for multiaffine-constrained problems.
#[derive(Parser)]
#[command(name = "multiadmm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a zoo problem; writes trace.csv, config.json and state/ under --out.
    /// Exit code 0 converged, 2 iteration limit, 3 diverged, 1 error.
    Solve(Overrides),
    /// Print the assumption report as JSON; exit code 4 if any check fails.
    Check(Overrides),
    /// Closed-form demonstrations.
    #[command(subcommand)]
    Demo(Demo),
    /// Compare sbd1 and sbd0 on shared noiseless and noisy data.
    Bench {
        #[command(flatten)]
        overrides: Overrides,
        /// Iterations excluded from the multiplier trend.
        #[arg(long, default_value_t = 100)]
        burn_in: usize,
    },
}

#[derive(Subcommand)]
enum Demo {
    /// Print the first ITERS iterates (k,x,y,w) of the two-block counterexample.
    Counterexample {
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 0.0)]
        y0: f64,
        #[arg(long, default_value_t = 0.0)]
        w0: f64,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Solve(o) => commands::solve(&RunConfig::resolve(&o)?),
        Command::Check(o) => commands::check(&RunConfig::resolve(&o)?),
        Command::Demo(Demo::Counterexample { rho, iters, x0, y0, w0 }) => {
            print!("{}", commands::demo_counterexample(rho, iters, x0, y0, w0)?);
            Ok(0)
        }
        Command::Bench { overrides, burn_in } => commands::bench(&RunConfig::resolve(&overrides)?, burn_in),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors exit 1; code 2 is reserved for the iteration limit.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
