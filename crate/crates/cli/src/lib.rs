//! Configuration, execution and persistence for the `codesign` binary.

pub mod config;
pub mod experiment;

pub use config::ExperimentConfig;
