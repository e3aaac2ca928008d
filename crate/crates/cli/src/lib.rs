//! Command-line harness for `mtrnn`: run configuration, the train, pretrain,
//! finetune, eval, trace and synth commands, and their output formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, CliResult, ErrorKind};
