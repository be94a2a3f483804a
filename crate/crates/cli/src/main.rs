use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pce_core::harness::{self, RunConfig, SweepResult};
use pce_core::model::{sample_scenario, Scenario};
use pce_core::optimizer::estimate_scenario;

/// Multiuser MIMO-OFDM parametric channel estimation.
#[derive(Parser)]
#[command(name = "pce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat TOML run configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a scenario and write `scenario.json`.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the channels of a scenario file and write `result.json`.
    Estimate {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a power sweep and write the CSV, plot data and manifest.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Master seed of the sweep.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-render report files from a stored `sweep_result.json`.
    Report {
        result: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { common, seed } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            let scenario = sample_scenario(&cfg.scenario)?;
            ensure_dir(&common.out)?;
            let path = common.out.join("scenario.json");
            scenario.save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::Estimate { scenario, common } => {
            let cfg = load_config(common.config.as_deref())?;
            let scenario = Scenario::load(&scenario)
                .with_context(|| format!("loading {}", scenario.display()))?;
            let start = Instant::now();
            let result = estimate_scenario(&scenario, &cfg.estimator)?;
            ensure_dir(&common.out)?;
            let path = common.out.join("result.json");
            result.save(&path)?;
            println!(
                "estimated L = {:?}, objective {:.3}, {:.2} s; wrote {}",
                result.l_est,
                result.objective,
                start.elapsed().as_secs_f64(),
                path.display()
            );
        }
        Command::Sweep {
            common,
            seed,
            trials,
            threads,
        } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.sweep.master_seed = s;
            }
            if let Some(t) = trials {
                cfg.sweep.trials = t;
            }
            if threads.is_some() {
                cfg.sweep.threads = threads;
            }
            let start = Instant::now();
            let result = harness::run_sweep(&cfg)?;
            let written = harness::write_report(&result, &common.out)?;
            let failed = result.trials.iter().filter(|t| t.error.is_some()).count();
            println!(
                "{} trials ({} failed) in {:.1} s; monotonicity violations: {}",
                result.trials.len(),
                failed,
                start.elapsed().as_secs_f64(),
                result.telemetry.monotonicity_violations
            );
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Report { result, out } => {
            let result = SweepResult::load(&result)
                .with_context(|| format!("loading {}", result.display()))?;
            for p in harness::write_report(&result, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}
