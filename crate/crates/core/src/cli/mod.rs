//! Command-line front end: configuration and the four run modes.

pub mod config;
pub mod run;

pub use config::{load_config, Mode, RunConfig, Setup};
pub use run::{execute, exit_code, Outcome};
