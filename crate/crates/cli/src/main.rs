//! `onebit`: asymptotic predictions, Monte Carlo runs and equivalence checks
//! for one-bit linearly precoded downlinks.
//!
//! Exit status is 0 on success, 1 on usage or domain errors and 2 when
//! `--check` is given and a check fails. `ONEBIT_THREADS` caps the worker
//! count; output does not depend on it.

mod args;
mod commands;
mod format;

use std::env;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::Cli;
use commands::Outcome;

fn configure_threads() -> Result<()> {
    let Ok(value) = env::var("ONEBIT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("ONEBIT_THREADS must be a positive integer, got {value:?}"))?;
    if threads == 0 {
        anyhow::bail!("ONEBIT_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|()| commands::run(cli.command));
    match result {
        Ok(Outcome::Passed) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
