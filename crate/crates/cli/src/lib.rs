//! Experiment harness for nested diffusion bridge MRI reconstruction:
//! dataset generation, training, reconstruction, evaluation and inspection.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod format;
pub mod inspect;
pub mod reconstruct;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
