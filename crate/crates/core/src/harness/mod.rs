//! Experiment configuration, replication runner, CSV output and the CLI.

pub mod cli;
pub mod config;
pub mod output;
pub mod runner;

pub use config::ExperimentConfig;
pub use runner::{run_experiment, Experiment, ReplicationStats, StageStats};
