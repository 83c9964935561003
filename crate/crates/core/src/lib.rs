//! Core library for post-analysis-aware telemetry sampling.
//!
//! The flow is: build a [`profile::ReferenceProfile`] from fault-free data,
//! then [`pipeline::analyze`] production data window by window (detection,
//! root-cause scoring, per-item scores) and [`pipeline::sample`] it under a
//! budget.

pub mod config;
pub mod detect;
pub mod ingest;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod profile;
pub mod rca;
pub mod sampler;
mod serde_entries;

pub use config::PipelineConfig;
pub use io::Telemetry;
pub use pipeline::{analyze, resample, sample, Analysis, PipelineError};
pub use profile::{build_profile, ReferenceProfile};
