//! Three-stage synthetic fingerprint generation (identity, warp/crop, texture)
//! with an open evaluation toolkit: minutiae extraction and matching, score
//! distribution analysis, leakage search, and a fixed-length embedding benchmark.

pub mod analysis;
pub mod binarizer;
pub mod cli;
pub mod config;
pub mod domain;
pub mod embedding;
pub mod error;
pub mod corpus;
pub mod imgproc;
pub mod masterprint;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod tps;
pub mod warp;

pub use error::{Error, Result};
