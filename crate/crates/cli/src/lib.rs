//! File formats, checkpoints and commands around [`capsdbn_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;
pub mod imageio;
pub mod manifest;
pub mod report;

pub use config::RunConfig;
pub use error::{CliError, Result};
