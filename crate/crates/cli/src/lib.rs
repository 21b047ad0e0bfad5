//! Library side of the `gapbound` command: configuration, experiment
//! runners and artifact writers.

pub mod config;
pub mod output;
pub mod run;

pub use config::{validate, Diagnostic, Experiment, ExperimentConfig, RunPlan, Severity};
pub use run::{run, RunError, RunSummary};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "GAPBOUND_THREADS";
