//! Config-driven front end of the `parahom` laboratory: declare an
//! experiment in a config file, run it, and get a reproducible report.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{execute, run_command, CliError, Command, TensorMode};
pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use report::{Check, Report};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book {}
