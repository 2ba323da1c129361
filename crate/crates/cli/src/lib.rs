//! Library surface of the pipeline driver, exposed so integration tests
//! can run the commands in-process and inspect their outcomes.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_certify, cmd_report, cmd_simulate, cmd_train, Outcome, TerminalMode,
};
pub use config::{load_config, BuiltConfig};
pub use manifest::RunManifest;
