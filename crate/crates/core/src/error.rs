use alloc::vec::Vec;

use crate::types::Violation;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid tolerance: {0}")]
    InvalidTolerance(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("invalid example: {}", display_violations(.0))]
    InvalidExample(Vec<Violation>),

    #[error("invalid candidate chain: {0}")]
    InvalidCandidates(&'static str),

    #[error("set score for prefix {0} is not finite")]
    NonFiniteSetScore(usize),

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("truncation mismatch: expected B = {expected}, found {found}")]
    TruncationMismatch { expected: usize, found: usize },

    #[error("prefix length {len} out of range 1..={max}")]
    PrefixOutOfRange { len: usize, max: usize },

    #[error("platt-degenerate: both classes are required to fit Platt scaling")]
    PlattDegenerate,

    #[error("set size {size} exceeds model capacity b_max = {b_max}")]
    SetTooLarge { size: usize, b_max: usize },

    #[error("training data is empty")]
    EmptyTrainingData,

    #[error("model shape mismatch: {0}")]
    ModelShape(&'static str),

    #[error("exhaustive oracle supports at most {max} labels, got {got}")]
    TooManyLabels { got: usize, max: usize },
}

fn display_violations(violations: &[Violation]) -> alloc::string::String {
    use core::fmt::Write;
    let mut out = alloc::string::String::new();
    for (i, v) in violations.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{v}");
    }
    out
}
