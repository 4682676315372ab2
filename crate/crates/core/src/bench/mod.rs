//! Configuration-driven experiment harness and its command-line front end.

pub mod cli;
pub mod config;
pub mod output;
pub mod pipeline;
pub mod selftest;
pub mod sweep;

pub use config::{ExperimentConfig, Method, SweepVariable};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use sweep::{sweep, SweepResult, SweepRow};
