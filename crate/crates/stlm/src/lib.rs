//! Command-line driver and file formats for `stlm-core`: checkpoints,
//! anomaly-map dumps, MVTec-style dataset trees, JSON configuration,
//! run manifests and metric reports.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod format;
pub mod manifest;
pub mod mvtec;
pub mod report;

pub use config::Config;
pub use error::{Result, StlmError};
