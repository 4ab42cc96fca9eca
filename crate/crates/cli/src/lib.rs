//! Command-line driver for jldict.

pub mod args;
pub mod commands;
pub mod config;
pub mod container;
pub mod svg;

pub use commands::{exit_code, run, Failure};
