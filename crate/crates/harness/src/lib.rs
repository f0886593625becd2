//! Experiment harness for multi-segment reconstruction: data generation,
//! solver runs over several initializations, parameter sweeps and evaluation.
//! The `msr` binary is a thin CLI over [`run`].

pub mod config;
pub mod error;
pub mod run;
pub mod signals;

pub use config::{ExperimentConfig, Solver};
pub use error::{HarnessError, Result};
