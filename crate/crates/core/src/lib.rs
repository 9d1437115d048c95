//! Conformal prediction sets with a bounded number of false positives.
//!
//! Given per-label scores for multi-label examples, this crate builds nested
//! candidate chains, scores them with a set function, calibrates a threshold
//! that keeps either the expected false-positive count at most `k` (k-FP) or
//! the probability of more than `k` false positives at most `delta`
//! ((k, delta)-FP), and emits the largest admissible candidate set.
//!
//! The crate is `no_std` (it needs `alloc`). IO, the synthetic generator and
//! the trial harness live in the `fpcp` companion crate.
//!
//! ```
//! use fpcp_core::{calibration, fp, setfn::MaxScore, CalibrationSet, NestedCandidates, ScoredExample};
//!
//! let cal: Vec<_> = (0..20)
//!     .map(|i| {
//!         let ex = ScoredExample::new(
//!             format!("ex{i}"),
//!             vec![0.95, 0.8, 0.3, 0.1],
//!             [0, 1],
//!         );
//!         let cand = NestedCandidates::build(&ex, 4, &MaxScore).unwrap();
//!         (cand, ex.positives.clone())
//!     })
//!     .collect();
//! let cal = CalibrationSet::new(cal).unwrap();
//! let threshold = calibration::calibrate_t_k(&cal, 1.0).unwrap();
//!
//! let test = ScoredExample::new("test", vec![0.9, 0.85, 0.2, 0.05], [0, 1]);
//! let cand = NestedCandidates::build(&test, 4, &MaxScore).unwrap();
//! let pred = calibration::predict_greedy(&cand, &threshold).unwrap();
//! assert!(fp::false_positives(&test.positives, &pred.labels) <= 2);
//! ```
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod baselines;
pub mod calibration;
mod error;
pub mod fp;
mod math;
pub mod metrics;
pub mod oracle;
pub mod setfn;
mod types;

pub use calibration::CalibrationSet;
pub use error::{Error, Result};
pub use fp::FpStepFunction;
pub use types::{
    rank_labels, validate_example, CalibratedThreshold, LabelSet, NestedCandidates, PredictionSet,
    ScoredExample, Tolerance, Violation,
};
