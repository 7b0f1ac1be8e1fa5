//! Std side of leancnn: dataset IO, checkpoints, reports, the training
//! harness, benchmarks, configuration and the CLI.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod train;

pub use error::{Error, Result};
