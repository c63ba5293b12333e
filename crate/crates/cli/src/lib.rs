//! Experiment runner for parameter-efficient masking networks: training,
//! evaluation, restoration and storage reports over `.pemn` containers.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{BaselineConfig, DataConfig, DatasetKind, ExperimentConfig, ModeArg, Preset, StrategyArg};
pub use error::CliError;
