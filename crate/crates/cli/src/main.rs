//! `dfm`: experiment driver for exact discrete flow matching on the torus.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
//! configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Experiment;

#[derive(Parser)]
#[command(name = "dfm", version, about = "Exact kernels, scores, sampler and losses for discrete flow matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every invariant check on the configured instance.
    Verify,
    /// Simulate paths and write their final states.
    Sample,
    /// Exact KL/TV sweep over step size, early stopping and score perturbation.
    Sweep,
    /// Train a tabular score by descent on the exact loss.
    Train,
    /// Run the transition-kernel checks alone.
    KernelsCheck,
}

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let exp = match Experiment::load(cli.config.as_deref()) {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Verify => commands::verify(&exp, &cli.out),
        Command::KernelsCheck => commands::kernels_check(&exp, &cli.out),
        Command::Sweep => commands::sweep(&exp, &cli.out),
        Command::Sample => commands::sample(&exp, &cli.out).map(|_| true),
        Command::Train => commands::train(&exp, &cli.out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
