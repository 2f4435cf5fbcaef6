//! Experiment harness for disagreement-probability resampling: configuration,
//! seeded cells, sweeps, bound checks and CSV output. The `dpr` binary is a
//! thin command-line layer over [`commands`].

pub mod commands;
pub mod config;
mod error;
pub mod report;
pub mod runner;

pub use commands::{cmd_ablate, cmd_diagnose, cmd_generate, cmd_run, cmd_verify_bounds, Outcome};
pub use config::{ExperimentConfig, Mode, Overrides};
pub use error::{LabError, LabResult};
pub use runner::{CellResult, Lab, Variant};
