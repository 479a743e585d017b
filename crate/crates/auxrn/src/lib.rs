//! File formats, checkpoints, reports and the command line for the
//! `auxrn-core` navigation agent.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod formats;
pub mod report;

pub use error::{Error, Result};
