//! File formats and the command-line front end for `vitse-core`.
//!
//! - [`fer`]: FER-2013 CSV reader
//! - [`checkpoint`]: binary checkpoints
//! - [`pgm`]: P5 greymaps for attention maps and dataset export
//! - [`runconfig`]: `key = value` run configuration
//! - [`commands`]: `train`, `eval`, `attnmap` and `gradcheck`

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod error;
pub mod fer;
pub mod pgm;
pub mod runconfig;
pub mod settings;

pub use error::CliError;
