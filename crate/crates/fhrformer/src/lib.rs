//! File formats, configuration, threading and plotting around
//! `fhrformer-core`, plus the `fhrformer` command-line tool.

pub mod binio;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod csvio;
pub mod error;
pub mod plot;
pub mod threads;

pub use error::{CliError, Result};
