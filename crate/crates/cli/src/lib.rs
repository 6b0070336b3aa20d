//! Command-line front end: configuration, dataset files and the commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{cmd_eval, cmd_fit, cmd_render, cmd_synth, cmd_train, EvalSource, RenderOptions, TrainOptions};
pub use config::Config;
pub use error::{CliError, CliResult};
