//! Set nonconformity functions `F(x, S)` over score-ranked prefixes.
//!
//! Three variants: the largest single-label uncertainty in the set
//! ([`MaxScore`]), the summed Platt-calibrated uncertainty ([`SumScore`]), and a
//! DeepSets model predicting the distribution of the false-positive count
//! ([`deepsets::DeepSetsScore`]).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{rank_labels, ScoredExample};

pub mod deepsets;
mod platt;
pub mod train;

pub use deepsets::{f_k, f_k_delta, DeepSetsModel, DeepSetsScore, Dense, FpDistribution, Readout};
pub use platt::{fit_platt, PlattParams};
pub use train::{train_deepsets, TrainConfig};

/// A set function evaluated along a nested chain.
pub trait SetFunction {
    /// Scores every prefix `S_1, …, S_m` of a chain, given the per-label
    /// scores of the chain in rank order (non-increasing).
    fn chain_scores(&self, ranked_scores: &[f64]) -> Result<Vec<f64>>;
}

impl<T: SetFunction + ?Sized> SetFunction for &T {
    fn chain_scores(&self, ranked_scores: &[f64]) -> Result<Vec<f64>> {
        (**self).chain_scores(ranked_scores)
    }
}

/// `F(x, S) = max { 1 - p(y) : y ∈ S }`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MaxScore;

impl SetFunction for MaxScore {
    fn chain_scores(&self, ranked_scores: &[f64]) -> Result<Vec<f64>> {
        let mut worst = f64::NEG_INFINITY;
        Ok(ranked_scores
            .iter()
            .map(|&p| {
                worst = worst.max(1.0 - p);
                worst
            })
            .collect())
    }
}

/// `F(x, S) = Σ_{y ∈ S} (1 - platt(p(y)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumScore {
    pub platt: PlattParams,
}

impl SetFunction for SumScore {
    fn chain_scores(&self, ranked_scores: &[f64]) -> Result<Vec<f64>> {
        let mut total = 0.0;
        Ok(ranked_scores
            .iter()
            .map(|&p| {
                total += 1.0 - self.platt.apply(p);
                total
            })
            .collect())
    }
}

fn ranked_prefix(ex: &ScoredExample, prefix_len: usize) -> Result<Vec<f64>> {
    let n = ex.n_labels();
    if prefix_len == 0 || prefix_len > n {
        return Err(Error::PrefixOutOfRange {
            len: prefix_len,
            max: n,
        });
    }
    Ok(rank_labels(&ex.scores)
        .into_iter()
        .take(prefix_len)
        .map(|c| ex.scores[c])
        .collect())
}

/// Max scoring of the top-`prefix_len` ranked labels of `ex`.
pub fn max_score(ex: &ScoredExample, prefix_len: usize) -> Result<f64> {
    let ranked = ranked_prefix(ex, prefix_len)?;
    Ok(*MaxScore
        .chain_scores(&ranked)?
        .last()
        .expect("non-empty prefix"))
}

/// Sum scoring of the top-`prefix_len` ranked labels of `ex`.
pub fn sum_score(ex: &ScoredExample, prefix_len: usize, platt: PlattParams) -> Result<f64> {
    let ranked = ranked_prefix(ex, prefix_len)?;
    Ok(*SumScore { platt }
        .chain_scores(&ranked)?
        .last()
        .expect("non-empty prefix"))
}
