//! Experiment orchestration: configuration plus the commands exposed by the
//! command-line tool.

pub mod commands;
pub mod config;

pub use commands::*;
pub use config::*;
