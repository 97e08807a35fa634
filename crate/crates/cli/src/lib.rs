//! Experiment drivers behind the `hecsb` tool: dataset ingest, seed
//! derivation, reconstruction/rate-distortion/latency runs, and the
//! teacher/split artifact files the runtime deploys from.

pub mod artifacts;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod seeds;

pub use config::Config;
pub use data::ImageDataset;
pub use error::CliError;
