//! Config-driven experiment harness: runs experiments into CSV bundles and
//! checks bundles against criteria files.

mod bundle;
mod check;
mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, EXPERIMENTS};

/// Only environment variable consulted: overrides the output directory.
const OUT_ENV: &str = "EIGENGROWTH_OUT";

#[derive(Parser)]
#[command(name = "eigengrowth", version, about = "Eigenfunction growth experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments named in a config file and write a result bundle.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config and the environment).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluate the config's checks; the exit status reports the outcome.
        #[arg(long)]
        check: bool,
    },
    /// Check a result bundle against a criteria file.
    Check { bundle: PathBuf, criteria: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Run { config, out, check } => run(&config, out, check),
        Command::Check { bundle, criteria } => {
            let (_, tables) = match bundle::load(&bundle) {
                Ok(b) => b,
                Err(e) => {
                    println!("FAIL bundle integrity: {e:#}");
                    return Ok(false);
                }
            };
            let checks = check::load_criteria(&criteria)?;
            let outcomes: Vec<_> = checks.iter().map(|c| c.evaluate(&tables)).collect();
            Ok(check::report(&outcomes))
        }
        Command::ListExperiments => {
            EXPERIMENTS.iter().for_each(|e| println!("{e}"));
            Ok(true)
        }
    }
}

fn output_dir(config_path: &Path, config: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| {
            let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            PathBuf::from("results").join(stem)
        })
}

fn run(config_path: &Path, out: Option<PathBuf>, check: bool) -> Result<bool> {
    let config = RunConfig::load(config_path)?;
    let dir = output_dir(config_path, &config, out);
    let results = experiments::run_all(&config)?;
    let meta = bundle::write(&dir, &config, &results)?;
    for r in &results {
        println!("{}: {} table(s) in {:.2}s", r.name, r.tables.len(), r.seconds);
    }
    println!("bundle {} ({} tables, config {})", dir.display(), meta.tables.len(), &meta.config_sha256[..12]);
    if !check {
        return Ok(true);
    }
    let (_, tables) = bundle::load(&dir)?;
    let outcomes: Vec<_> = config.checks.iter().map(|c| c.evaluate(&tables)).collect();
    Ok(check::report(&outcomes))
}
