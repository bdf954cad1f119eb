//! Command-line front end for the `ogstyle` pipeline: corpus synthesis,
//! pretraining, pair mining, training, transfer, evaluation and reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod plots;

pub use commands::{run, Cli};
pub use error::CliError;

pub const VERSION: &str = env!("OGSTYLE_VERSION");
