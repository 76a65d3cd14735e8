//! Config-driven experiment runner for `fgl-core`.
//!
//! An [`ExperimentConfig`] describes a dataset, model, federation, attack
//! and defense plus optional sweep axes. [`run_experiment`] expands the
//! sweep into arms, runs every arm for every seed and returns one metric
//! row per measurement; [`emit_results`] writes them to disk.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use config::{Arm, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_arms, run_experiment, MetricRow, ResultsTable};
pub use output::{emit_results, Summary};
