//! File formats, checkpoints and the experiment pipeline around
//! `triadrec-core`, plus the `triadrec` command line.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod features;
pub mod manifest;
pub mod pipeline;
pub mod ppm;
pub mod report;
pub mod splitfile;
pub mod stages;

pub use error::{HarnessError, Result};
