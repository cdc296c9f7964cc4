//! Data ingestion, synthetic data, configuration, metrics and experiment
//! orchestration.

pub mod config;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod synth;
