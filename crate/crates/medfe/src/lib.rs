//! File formats, configuration, and the command implementations behind
//! the `medfe` binary. The numeric work lives in `medfe-core`; this crate
//! owns everything that touches the filesystem or a terminal.

pub mod ckpt;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod ppm;

pub use error::{CliError, CliResult};
