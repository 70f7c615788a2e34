//! Synthetic ground truth, dataset I/O, metrics and configuration files.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod scene;
