//! Driver for the `fracot` binary: run configurations, snapshot output and
//! the three subcommands.

pub mod commands;
pub mod config;
pub mod output;
