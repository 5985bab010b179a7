//! Experiment orchestration for patch-size curricula: training loops,
//! held-out evaluation, repeated-run suites and report writing.

pub mod config;
pub mod error;
pub mod eval;
pub mod report;
pub mod sample_stats;
pub mod suites;
pub mod train;

pub use config::{DatasetSource, ExperimentConfig, PolicySpec};
pub use error::{Error, Result};
pub use suites::{run_convergence_suite, run_variability_suite, RunResult};
pub use train::{run_training, TrainOutcome};
