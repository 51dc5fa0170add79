//! Command-line driver for `nhj-core`: JSON run configuration, CSV and JSON
//! artifacts, and the solve / simulate / audit / convergence pipelines.

pub mod cli;
pub mod commands;
pub mod config;
pub mod formats;
