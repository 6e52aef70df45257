//! Experiment runner: configure a problem, run the KM engine, verify the
//! bounds and certificates, and write CSV traces and JSON reports.

// `!(a <= b)` is deliberate: NaN must fail a check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod presets;
pub mod report;
pub mod runner;
pub mod trace_csv;

pub use error::CliError;
