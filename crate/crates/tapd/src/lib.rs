//! Experiment harness for `tapd-core`: configuration files, run
//! directories with checkpoints and resumable manifests, metric streams and
//! offline reports.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use error::{Error, Result};
