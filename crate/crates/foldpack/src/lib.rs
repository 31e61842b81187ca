//! Standard-library companion to `foldpack-core`: point-cloud files, INI
//! configuration, checkpoints, run manifests, and the `foldpack` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;

pub use error::{Error, Result};
