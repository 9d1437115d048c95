#![allow(dead_code)]

use fpcp::fpcp_core::ScoredExample;
use fpcp::synthetic::{generate_synthetic, Synthetic, SyntheticSpec};

pub fn synthetic(
    n_examples: usize,
    n_labels: usize,
    noise: f64,
    miscal: f64,
    seed: u64,
) -> Synthetic {
    generate_synthetic(&SyntheticSpec {
        n_examples,
        n_labels,
        base_rate: 0.15,
        score_noise: noise,
        miscalibration: miscal,
        seed,
    })
    .unwrap()
}

pub fn calibrated_pool(n_examples: usize, n_labels: usize, seed: u64) -> Vec<ScoredExample> {
    synthetic(n_examples, n_labels, 0.0, 1.0, seed).examples
}

/// Passes when `mean <= bound + 3 * se`.
pub fn within_3se(mean: f64, se: f64, bound: f64) -> bool {
    mean <= bound + 3.0 * se
}
