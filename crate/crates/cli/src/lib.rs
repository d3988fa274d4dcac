//! Experiment harness behind the `penn` binary: configuration, CSV datasets,
//! manifests, plots and the four subcommands.
pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod table;
