//! Command-line layer for `usdiff-core`: configuration files, run manifests,
//! the USDF tensor container, PGM output, and the six subcommands.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;
pub mod pgm;
pub mod tensorfile;

pub use commands::{cmd_bmaps, cmd_eval, cmd_forward, cmd_sample, cmd_train, cmd_verify, Outcome};
pub use config::RunConfig;
pub use tensorfile::TensorFile;
