//! Experiment harness for the knotmpc controllers.
//!
//! An [`ExperimentConfig`] describes a sweep; [`run_experiment`] executes it
//! on a worker pool and returns one [`TrialRecord`] per trial and
//! controller, written as CSV by [`write_csv`].

pub mod config;
pub mod error;
pub mod experiment;
pub mod presets;
pub mod record;
pub mod summary;
pub mod timing;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{BenchError, Result};
pub use experiment::{run_experiment, run_experiment_to};
pub use record::{write_csv, TrialRecord};
