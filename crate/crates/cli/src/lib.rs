//! Command-line entry points and the HTTP service.

pub mod commands;
pub mod config;
mod error;
pub mod service;

pub use error::{CliError, Result};
