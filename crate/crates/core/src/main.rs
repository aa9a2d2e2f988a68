//! Command-line front end: run a scenario, compare modes, or synthesize CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use streamprep::harness::{self, ScenarioConfig};
use streamprep::model::write_streams_csv;
use streamprep::pipeline::Mode;
use streamprep::{Error, Result};

#[derive(Parser)]
#[command(name = "streamprep", version, about = "Multi-service sensor stream preprocessing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace, features and report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the mode in the config.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every mode on the same scenario.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the scenario's streams (faults applied) as CSV.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, mode, seed, out } => {
            let cfg = load(&config, seed)?;
            let report = harness::run_scenario(&cfg, mode.unwrap_or(cfg.mode), &out)?;
            print!("{}", harness::run::render_report(&report));
            eprintln!("wall clock per cycle: {:.3} ms", report.wall_clock_per_cycle_ms);
            if !report.cycle_failures.is_empty() {
                return Err(Error::Stream(format!("{} cycles failed", report.cycle_failures.len())));
            }
        }
        Command::Compare { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let cmp = harness::compare_modes(&cfg, Some(&out))?;
            print!("{}", harness::run::render_comparison(&cmp));
            for (mode, ms) in &cmp.wall_clock_per_cycle_ms {
                eprintln!("{mode}: {ms:.3} ms per cycle");
            }
        }
        Command::Synth { spec, out, seed } => {
            let cfg = load(&spec, seed)?;
            let streams = harness::run::load_streams(&cfg)?;
            let file = std::fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_streams_csv(&streams, file)?;
            eprintln!("wrote {} streams to {}", streams.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
