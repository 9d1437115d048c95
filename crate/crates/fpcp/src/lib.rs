//! Data handling, evaluation harness and command-line pipeline for
//! false-positive-controlled conformal prediction, built on [`fpcp_core`].
//!
//! - [`dataset`]: JSON-lines datasets and ground-truth sidecars.
//! - [`synthetic`]: a generator with known per-label probabilities.
//! - [`split`]: seeded three-way splits.
//! - [`artifacts`]: model and rule files with content hashes.
//! - [`harness`]: randomized trials, k sweeps and their reports.

pub mod artifacts;
pub mod dataset;
mod error;
pub mod harness;
pub mod model;
pub mod report;
pub mod split;
pub mod synthetic;

pub use error::{Error, Result};
pub use fpcp_core;
