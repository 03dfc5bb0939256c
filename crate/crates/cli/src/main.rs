use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracpe_cli::{experiments, Experiment, Invocation, Outcome};

/// Fractional-noise primitive-equation experiments.
///
/// Exit status: 0 on PASS or a completed run, 2 when an experiment's
/// criterion fails, 1 on any error.
#[derive(Parser)]
#[command(name = "fracpe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "FRACPE_OUT")]
    out: Option<PathBuf>,
    /// Override the config's seed (and seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "FRACPE_THREADS")]
    threads: Option<usize>,
    /// Continue the stopped run in this directory.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
    /// Stop `simulate` after this many steps in total.
    #[arg(long, global = true)]
    max_steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace condition and optional moment, regularity and growth checks.
    CheckNoise,
    /// Write one fBm path with its sidecar.
    GenFbm,
    /// Variance of the scalar Ornstein-Uhlenbeck generator against its oracle.
    OuStats,
    /// Integrate one trajectory.
    Simulate,
    /// Pullback diameters over a ladder of start times.
    Pullback,
    /// Entry times into an absorbing ball.
    Absorb,
    /// Contraction diagnostic and its scale stability.
    Contract,
    /// Summarize an existing run directory.
    Report {
        /// Run directory; defaults to --out.
        dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let inv = Invocation {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        threads: cli.threads,
        resume: cli.resume,
        max_steps: cli.max_steps,
    };
    let experiment = match cli.command {
        Command::CheckNoise => Experiment::CheckNoise,
        Command::GenFbm => Experiment::GenFbm,
        Command::OuStats => Experiment::OuStats,
        Command::Simulate => Experiment::Simulate,
        Command::Pullback => Experiment::Pullback,
        Command::Absorb => Experiment::Absorb,
        Command::Contract => Experiment::Contract,
        Command::Report { dir } => {
            let Some(dir) = dir.or(inv.out) else {
                eprintln!("error: report needs a run directory");
                return ExitCode::from(1);
            };
            return finish(experiments::report(&dir));
        }
    };
    finish(fracpe_cli::run(experiment, &inv))
}

fn finish(r: fracpe_cli::Result<Outcome>) -> ExitCode {
    match r {
        Ok(o) => ExitCode::from(o.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
