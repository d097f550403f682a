//! Experiment harness around `rsj-core`: data loading, configuration,
//! result tables, and the experiment drivers behind the `rsj` binary.

pub mod config;
pub mod dataio;
pub mod error;
pub mod experiments;

pub use error::{CliError, Result};
