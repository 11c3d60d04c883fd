//! File formats and command implementations for the `mocosa` binary.

// Guards such as `!(x >= 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod vocab;

pub use error::{CliError, Result};
