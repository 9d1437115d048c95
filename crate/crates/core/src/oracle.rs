//! Brute-force references for tests.
//!
//! [`oracle_predict`] is the best set under the true conditional label
//! distribution (labels independent given `x`), found by enumerating every
//! subset. [`brute_force_threshold`] evaluates the calibration conditions at
//! every breakpoint, every midpoint, and beyond both ends.

use alloc::vec;
use alloc::vec::Vec;

use crate::calibration::CalibrationSet;
use crate::error::{Error, Result};
use crate::fp::fp_max;
use crate::types::Tolerance;

pub const MAX_ORACLE_LABELS: usize = 12;

/// Distribution of the number of successes among independent Bernoullis.
pub fn poisson_binomial(probs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut pmf = vec![1.0];
    for p in probs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (i, &mass) in pmf.iter().enumerate() {
            next[i] += mass * (1.0 - p);
            next[i + 1] += mass * p;
        }
        pmf = next;
    }
    pmf
}

/// `E[TPP(Z, S) | x]` for independent labels with marginals `p`.
pub fn expected_tpp(p: &[f64], set: &[usize]) -> f64 {
    set.iter()
        .map(|&c| {
            // c ∈ Z contributes 1 / (1 + #other positives)
            let others = poisson_binomial(
                p.iter()
                    .enumerate()
                    .filter(|&(o, _)| o != c)
                    .map(|(_, &q)| q),
            );
            let inv: f64 = others
                .iter()
                .enumerate()
                .map(|(m, mass)| mass / (m + 1) as f64)
                .sum();
            p[c] * inv
        })
        .sum()
}

/// `E[FP(Z, S) | x]`.
pub fn expected_fp(p: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&c| 1.0 - p[c]).sum()
}

/// `P(FP(Z, S) > k | x)`.
pub fn prob_fp_exceeds(p: &[f64], set: &[usize], k: f64) -> f64 {
    poisson_binomial(set.iter().map(|&c| 1.0 - p[c]))
        .iter()
        .enumerate()
        .filter(|&(m, _)| m as f64 > k)
        .map(|(_, mass)| mass)
        .sum()
}

/// The TPR-maximizing set satisfying the tolerance conditionally on `x`;
/// ties go to the smaller set (then the lexicographically smaller mask).
pub fn oracle_predict(p: &[f64], tolerance: Tolerance) -> Result<Vec<usize>> {
    tolerance.check()?;
    if p.len() > MAX_ORACLE_LABELS {
        return Err(Error::TooManyLabels {
            got: p.len(),
            max: MAX_ORACLE_LABELS,
        });
    }
    let n = p.len();
    let mut masks: Vec<u32> = (0..1u32 << n).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));

    let mut best: Vec<usize> = Vec::new();
    let mut best_tpp = 0.0;
    for mask in masks {
        let set: Vec<usize> = (0..n).filter(|c| mask >> c & 1 == 1).collect();
        let admissible = match tolerance {
            Tolerance::KFp { k } => expected_fp(p, &set) <= k,
            Tolerance::KDeltaFp { k, delta } => prob_fp_exceeds(p, &set, k) < delta,
        };
        if !admissible {
            continue;
        }
        let tpp = expected_tpp(p, &set);
        if tpp > best_tpp + 1e-12 {
            best_tpp = tpp;
            best = set;
        }
    }
    Ok(best)
}

/// Supremum of the feasible thresholds by exhaustive evaluation.
pub fn brute_force_threshold(cal: &CalibrationSet, tolerance: Tolerance) -> f64 {
    let n = cal.len();
    let b = cal.truncation_b();
    let feasible = |t: f64| {
        let fps: Vec<usize> = cal.items().iter().map(|(c, z)| fp_max(c, z, t)).collect();
        match tolerance {
            Tolerance::KFp { k } => (b + fps.iter().sum::<usize>()) as f64 / (n + 1) as f64 <= k,
            Tolerance::KDeltaFp { k, delta } => {
                fps.iter().filter(|&&f| f as f64 <= k).count() as f64 / (n + 1) as f64
                    >= 1.0 - delta
            }
        }
    };
    if feasible(f64::INFINITY) {
        return f64::INFINITY;
    }

    let mut points: Vec<f64> = cal
        .items()
        .iter()
        .flat_map(|(c, _)| c.set_scores().iter().copied())
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut probes = Vec::with_capacity(2 * points.len() + 2);
    if let (Some(&lo), Some(&hi)) = (points.first(), points.last()) {
        probes.push(lo - 1.0);
        probes.push(hi + 1.0);
    }
    probes.extend(points.iter().copied());
    probes.extend(points.windows(2).map(|w| (w[0] + w[1]) / 2.0));

    probes
        .into_iter()
        .filter(|&t| feasible(t))
        .fold(f64::NEG_INFINITY, f64::max)
}
