//! Config sections and subcommand implementations behind the `velo`
//! binary.

pub mod commands;
pub mod settings;
