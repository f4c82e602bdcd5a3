//! Files, threads and the command line around `mcpose-core`.
//!
//! A scene directory written by `generate` holds `depth.pgm` with its
//! `depth.json` sidecar, the resolved `scene.json` (also the ground truth)
//! and `detections.json`. `estimate` reads such a directory; `eval` compares
//! its results to the ground truth; `bench` repeats estimation and reports
//! per-iteration timings and memory counters.

pub mod commands;
pub mod config;
pub mod depth_io;
pub mod error;
pub mod exec;
pub mod formats;

pub use error::{CliError, CliResult};
