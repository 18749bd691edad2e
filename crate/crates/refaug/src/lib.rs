//! File formats, run configs and the `refaug` command line on top of
//! `refaug-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod io;
pub mod policy_file;

pub use crate::error::{CliError, CliResult};
