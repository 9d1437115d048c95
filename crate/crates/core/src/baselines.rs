//! Comparison methods: a fixed top-k' rule fitted on calibration averages,
//! and one-sided split-conformal inner and outer sets.
//!
//! Inner sets use `V_i = max score among negatives` and keep labels with
//! `score > τ`, so a false positive at test time requires `V_{n+1} > τ`.
//! Outer sets use `V_i = -(min score among positives)` and keep labels with
//! `score >= -τ`, so missing a positive requires `V_{n+1} > τ`. Examples
//! without negatives (inner) or without positives (outer) get `V_i = -∞`.

use alloc::vec::Vec;

use crate::calibration::{split_cp_quantile, CalibrationSet};
use crate::error::{Error, Result};
use crate::fp::prefix_false_positives;
use crate::types::{rank_labels, PredictionSet, ScoredExample, Tolerance};

/// Always predict the top `k_prime` ranked labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TopKRule {
    pub k_prime: usize,
}

/// Largest size `m` whose calibration average meets the tolerance, without
/// any finite-sample correction.
pub fn fit_top_k(cal: &CalibrationSet, tolerance: Tolerance) -> Result<TopKRule> {
    let fps: Vec<Vec<usize>> = cal
        .items()
        .iter()
        .map(|(c, z)| prefix_false_positives(c, z))
        .collect();
    let refs: Vec<&[usize]> = fps.iter().map(Vec::as_slice).collect();
    fit_top_k_from_prefix_fps(&refs, cal.truncation_b(), tolerance)
}

/// [`fit_top_k`] from per-example prefix FP sequences (`fps[i][m - 1]` is
/// the FP count of the top-`m` set; shorter chains saturate at their end).
pub fn fit_top_k_from_prefix_fps(
    fps: &[&[usize]],
    truncation_b: usize,
    tolerance: Tolerance,
) -> Result<TopKRule> {
    tolerance.check()?;
    if fps.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let n = fps.len() as f64;
    let fp_at = |seq: &[usize], m: usize| -> usize {
        if m == 0 || seq.is_empty() {
            0
        } else {
            seq[m.min(seq.len()) - 1]
        }
    };
    let meets = |m: usize| match tolerance {
        Tolerance::KFp { k } => fps.iter().map(|s| fp_at(s, m)).sum::<usize>() as f64 / n <= k,
        Tolerance::KDeltaFp { k, delta } => {
            fps.iter().filter(|s| fp_at(s, m) as f64 <= k).count() as f64 / n >= 1.0 - delta
        }
    };
    let k_prime = (0..=truncation_b).rev().find(|&m| meets(m)).unwrap_or(0);
    Ok(TopKRule { k_prime })
}

/// A fitted split-conformal threshold with the number of calibration
/// examples that received a `-∞` sentinel score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdFit {
    pub tau: f64,
    pub sentinels: usize,
}

fn fit_one_sided(
    cal: &[ScoredExample],
    epsilon: f64,
    score: impl Fn(&ScoredExample) -> Option<f64>,
) -> Result<ThresholdFit> {
    if cal.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut sentinels = 0;
    let v: Vec<f64> = cal
        .iter()
        .map(|ex| {
            score(ex).unwrap_or_else(|| {
                sentinels += 1;
                f64::NEG_INFINITY
            })
        })
        .collect();
    Ok(ThresholdFit {
        tau: split_cp_quantile(&v, epsilon)?,
        sentinels,
    })
}

/// Inner-set threshold `τ`: predict labels with `score > τ`.
///
/// Use `epsilon = k / B` for k-FP and `epsilon = delta` for (k, delta)-FP.
pub fn fit_inner_threshold(cal: &[ScoredExample], epsilon: f64) -> Result<ThresholdFit> {
    fit_one_sided(cal, epsilon, |ex| {
        ex.scores
            .iter()
            .enumerate()
            .filter(|(c, _)| !ex.positives.contains(*c))
            .map(|(_, &s)| s)
            .reduce(f64::max)
    })
}

/// Outer-set threshold `τ`: predict labels with `score >= -τ`.
pub fn fit_outer_threshold(cal: &[ScoredExample], epsilon: f64) -> Result<ThresholdFit> {
    fit_one_sided(cal, epsilon, |ex| {
        ex.positives
            .iter()
            .map(|c| ex.scores[c])
            .reduce(f64::min)
            .map(|s| -s)
    })
}

/// Inner-set level for a tolerance: `k / B` (capped below 1) or `delta`.
pub fn inner_epsilon(tolerance: Tolerance, truncation_b: usize) -> f64 {
    match tolerance {
        Tolerance::KFp { k } => (k / truncation_b as f64).min(1.0 - f64::EPSILON),
        Tolerance::KDeltaFp { delta, .. } => delta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum FixedRule {
    TopK(TopKRule),
    /// Keep labels with `score > tau`.
    Inner {
        tau: f64,
    },
    /// Keep labels with `score >= -tau`.
    Outer {
        tau: f64,
    },
}

/// Applies a fixed rule to the top-`truncation_b` ranked labels of `ex`.
pub fn predict_fixed(ex: &ScoredExample, rule: &FixedRule, truncation_b: usize) -> PredictionSet {
    let mut order = rank_labels(&ex.scores);
    order.truncate(truncation_b);
    let passes = |c: &usize| match *rule {
        FixedRule::TopK(_) => true,
        FixedRule::Inner { tau } => ex.scores[*c] > tau,
        FixedRule::Outer { tau } => ex.scores[*c] >= -tau,
    };
    // passing labels form a prefix of the descending ranking
    let mut len = order.iter().take_while(|c| passes(c)).count();
    if let FixedRule::TopK(TopKRule { k_prime }) = *rule {
        len = len.min(k_prime);
    }
    PredictionSet::from_prefix(ex.id.clone(), &order, len)
}
