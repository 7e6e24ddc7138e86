//! Experiment harness: configuration, the per-run pipeline and Monte Carlo
//! sweeps with CSV output.

pub mod config;
pub mod experiment;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, write_report, Aggregate, Report};
pub use pipeline::{Pipeline, RunDetail, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fdisac_core::Error),
    #[error("i/o: {0}")]
    Io(String),
}
