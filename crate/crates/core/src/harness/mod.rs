//! Scenario harness: TOML scenarios, synthetic streams, fault injection,
//! CSV ingestion, runs and mode comparisons.

pub mod config;
pub mod occupancy;
pub mod run;
pub mod synth;

pub use config::ScenarioConfig;
pub use run::{compare_modes, execute, ingest_csv, run_scenario, ComparisonReport, ScenarioReport, ScenarioRun};
pub use synth::{generate_all, generate_synthetic, inject_faults, rng_for};
