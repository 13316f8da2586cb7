//! Library side of the `convlstm-ad` command-line tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, SynthConfig};
pub use error::{exit, CliError, Result};
