//! Command implementations behind the `splatup` binary.

pub mod args;
pub mod commands;
pub mod robustness;

pub use args::{Cli, Command};
pub use commands::run;
