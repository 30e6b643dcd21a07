//! Configuration, output writers and subcommands of the `pflow` tool.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod svg;
pub mod table;

pub use commands::{cmd_certify, cmd_compare, cmd_run, cmd_sweep, load, ExitStatus, Outcome};
pub use config::{ConfigError, Experiment, ExperimentConfig};
