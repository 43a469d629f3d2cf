//! `ssnmf`: generate synthetic dispersion data, fit the four factorization
//! variants, score fits, and sweep model orders. Every run lands in its own
//! directory with a `run_config.toml` snapshot, so results are repeatable
//! from the outputs alone.
//!
//! Exit codes: 0 on success, 2 for configuration mistakes, 1 for everything
//! else (unreadable data, diverged fits, I/O failures).

mod cli;
mod commands;
mod plot;
mod runcfg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ssnmf::{Error, Result};

fn main() -> ExitCode {
    let parsed = cli::Cli::parse();
    match run(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(parsed: cli::Cli) -> Result<()> {
    let cfg = runcfg::RunConfig::load(parsed.config.as_deref())?;
    let threads = resolve_threads(parsed.threads, cfg.threads)?;
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let globals = commands::Globals {
        seed: parsed.seed.or(cfg.seed).unwrap_or(0),
        threads,
        outdir: parsed
            .output
            .clone()
            .or(cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("ssnmf-out")),
    };
    match parsed.command {
        cli::Command::Generate(args) => {
            commands::generate(&globals, &args, cfg.generate.unwrap_or_default())
        }
        cli::Command::Fit(args) => commands::fit(&globals, &args, cfg.fit.unwrap_or_default()),
        cli::Command::Evaluate(args) => {
            commands::evaluate(&globals, &args, cfg.evaluate.unwrap_or_default())
        }
        cli::Command::Sweep(args) => {
            commands::sweep(&globals, &args, cfg.sweep.unwrap_or_default())
        }
    }
}

/// Thread cap: flag, then config file, then the SSNMF_THREADS variable;
/// unset means rayon's default (all cores).
fn resolve_threads(flag: Option<usize>, cfg: Option<usize>) -> Result<Option<usize>> {
    let cap = match flag.or(cfg) {
        Some(t) => Some(t),
        None => match std::env::var("SSNMF_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::InvalidConfig(format!("SSNMF_THREADS={v:?} is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if cap == Some(0) {
        return Err(Error::InvalidConfig("thread cap must be >= 1".into()));
    }
    Ok(cap)
}
