//! The `cim` command-line tool and HTTP scoring service built on
//! [`cim_core`].

pub mod commands;
pub mod fixtures;
pub mod samples;
pub mod service;

pub use commands::{exit_code, run, Cli};
