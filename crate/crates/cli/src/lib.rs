//! Files and command line for `scmcts-core`: TOML configs, binary
//! checkpoints, JSON-lines metrics and data files, run manifests.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod metrics;

pub use error::{CheckpointError, ConfigError, Error, Result};
