//! Dataset and checkpoint formats plus the command-line pipeline built on
//! `splatfill-core`.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod formats;

pub use error::{Error, Result};
