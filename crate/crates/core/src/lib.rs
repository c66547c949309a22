//! Weakly-labeled dialect speech corpus construction and TTS evaluation.

pub mod audio;
pub mod backend;
pub mod did;
pub mod eval;
pub mod error;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
