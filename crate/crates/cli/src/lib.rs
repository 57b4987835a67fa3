//! Experiment driver: reproducible runs over the geoaux library, each
//! written to a content-addressed directory with a manifest.

pub mod commands;
pub mod error;
pub mod exec;
pub mod report;
pub mod run;
pub mod specs;

pub use commands::{dispatch, rerun, RunOptions};
pub use error::{CliError, Result};
