//! File formats, on-disk datasets and the command line around
//! `vidcount-core`.

pub mod annotation;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod pnm;

pub use error::{CliError, Result};
