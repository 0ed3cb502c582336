//! Experiment runner: flat config files in, CSV/grid artifacts and a
//! rerunnable manifest out.

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, ModelKind, OperatorKind, Protocol};
pub use run::{run_config, run_experiment, RunError, RunManifest};
