//! Command-line front end: TOML configuration and the `synthesize`,
//! `simulate`, `sweep` and `roa` commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_roa, cmd_simulate, cmd_sweep, cmd_synthesize, Outcome};
pub use config::{Overrides, RunConfig};
