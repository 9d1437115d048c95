//! Evaluation metrics: TPR, average FP and size, size-stratified violation,
//! percentile summaries, and area under a metric-vs-k curve.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::fp::{false_positives, true_positive_proportion};
use crate::math::{floor, sqrt};
use crate::types::{LabelSet, PredictionSet};

/// What a single prediction scored against its true label set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub size: usize,
    pub fp: usize,
    pub tpp: f64,
}

impl Outcome {
    pub fn of(pred: &PredictionSet, positives: &LabelSet) -> Self {
        Self {
            size: pred.labels.len(),
            fp: false_positives(positives, &pred.labels),
            tpp: true_positive_proportion(positives, &pred.labels),
        }
    }
}

/// Disjoint inclusive size ranges covering `0..=B`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizePartition {
    bins: Vec<(usize, usize)>,
}

impl SizePartition {
    /// Checks that `bins` are non-empty, disjoint, and exactly cover `0..=b`.
    pub fn new(mut bins: Vec<(usize, usize)>, b: usize) -> Result<Self> {
        bins.sort_unstable();
        let mut next = 0;
        for &(lo, hi) in &bins {
            if lo > hi || lo != next {
                return Err(Error::InvalidArgument(
                    "size bins must be disjoint, ordered and cover 0..=B",
                ));
            }
            next = hi + 1;
        }
        if next != b + 1 {
            return Err(Error::InvalidArgument("size bins must cover 0..=B"));
        }
        Ok(Self { bins })
    }

    /// `[0,0], [1,10], [11,50], [51,B]`, dropping ranges that fall past `B`.
    pub fn default_for(b: usize) -> Self {
        let mut bins = Vec::new();
        bins.push((0, 0));
        let mut lo = 1;
        for hi in [10, 50] {
            if lo > b {
                break;
            }
            bins.push((lo, hi.min(b)));
            lo = hi + 1;
        }
        if lo <= b {
            bins.push((lo, b));
        }
        Self { bins }
    }

    pub fn bins(&self) -> &[(usize, usize)] {
        &self.bins
    }

    fn bin_of(&self, size: usize) -> Option<usize> {
        self.bins
            .iter()
            .position(|&(lo, hi)| lo <= size && size <= hi)
    }
}

fn stratified_violation(
    outcomes: &[Outcome],
    part: &SizePartition,
    stat: impl Fn(&Outcome) -> f64,
    bound: f64,
) -> f64 {
    let mut sums = alloc::vec![0.0; part.bins.len()];
    let mut counts = alloc::vec![0usize; part.bins.len()];
    for o in outcomes {
        // sizes past the last bin fall into it
        let bin = part.bin_of(o.size).unwrap_or(part.bins.len() - 1);
        sums[bin] += stat(o);
        counts[bin] += 1;
    }
    sums.iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s / c as f64 - bound).max(0.0))
        .fold(0.0, f64::max)
}

/// `SSFP_k`: the worst over non-empty size bins of `max(mean FP - k, 0)`.
pub fn ssfp_k(outcomes: &[Outcome], k: f64, part: &SizePartition) -> f64 {
    stratified_violation(outcomes, part, |o| o.fp as f64, k)
}

/// `SSFP_{k,δ}`: the worst over non-empty size bins of
/// `max(fraction{FP > k} - delta, 0)`.
pub fn ssfp_k_delta(outcomes: &[Outcome], k: f64, delta: f64, part: &SizePartition) -> f64 {
    stratified_violation(
        outcomes,
        part,
        |o| if o.fp as f64 > k { 1.0 } else { 0.0 },
        delta,
    )
}

/// Per-trial metrics over a set of test outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrialMetrics {
    pub tpr: f64,
    pub avg_fp: f64,
    pub avg_size: f64,
    pub ssfp_k: f64,
    /// Only defined under a (k, delta) tolerance.
    pub ssfp_k_delta: Option<f64>,
    pub frac_fp_le_k: f64,
}

impl TrialMetrics {
    pub fn from_outcomes(
        outcomes: &[Outcome],
        k: f64,
        delta: Option<f64>,
        part: &SizePartition,
    ) -> Self {
        let n = outcomes.len().max(1) as f64;
        Self {
            tpr: outcomes.iter().map(|o| o.tpp).sum::<f64>() / n,
            avg_fp: outcomes.iter().map(|o| o.fp as f64).sum::<f64>() / n,
            avg_size: outcomes.iter().map(|o| o.size as f64).sum::<f64>() / n,
            ssfp_k: ssfp_k(outcomes, k, part),
            ssfp_k_delta: delta.map(|d| ssfp_k_delta(outcomes, k, d, part)),
            frac_fp_le_k: outcomes.iter().filter(|o| o.fp as f64 <= k).count() as f64 / n,
        }
    }
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = (q / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = floor(pos) as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Mean, Monte Carlo standard error and 16th/84th percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub p16: f64,
    pub p84: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                p16: f64::NAN,
                p84: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            sqrt(var / n as f64)
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean,
            se,
            p16: percentile(&sorted, 16.0),
            p84: percentile(&sorted, 84.0),
        }
    }
}

/// Trapezoidal area under `ys` over ascending `xs`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Auc {
    pub raw: f64,
    /// `raw / (x_max - x_min)`; for a one-point grid, the point value.
    pub normalized: f64,
    /// Set when the grid has a single point and no area is defined.
    pub degenerate: bool,
}

pub fn auc(xs: &[f64], ys: &[f64]) -> Result<Auc> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument("AUC needs matching non-empty grids"));
    }
    if xs
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
    {
        return Err(Error::InvalidArgument(
            "AUC grid must be strictly ascending",
        ));
    }
    if xs.len() == 1 {
        return Ok(Auc {
            raw: 0.0,
            normalized: ys[0],
            degenerate: true,
        });
    }
    let raw: f64 = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    Ok(Auc {
        raw,
        normalized: raw / (xs[xs.len() - 1] - xs[0]),
        degenerate: false,
    })
}
