//! Orchestration for the echoanat pipeline: configuration, run directories,
//! the CLI stages, and the HTTP service used by the segmentation workbench.

pub mod api;
pub mod commands;
pub mod config;
pub mod error;
pub mod jobs;
pub mod run;

pub use config::RunConfig;
pub use error::{PipelineError, Result};
