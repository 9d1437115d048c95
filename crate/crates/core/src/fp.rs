//! False positives, true positive proportion, and the worst-case step
//! function `FP_max(t) = max { FP(z, S_j) : v_j < t }`.

use alloc::vec::Vec;

use crate::types::{LabelSet, NestedCandidates};

/// `|set \ positives|`.
pub fn false_positives(positives: &LabelSet, set: &[usize]) -> usize {
    set.iter().filter(|&&c| !positives.contains(c)).count()
}

/// `|set ∩ positives| / max(|positives|, 1)`.
pub fn true_positive_proportion(positives: &LabelSet, set: &[usize]) -> f64 {
    let hits = set.iter().filter(|&&c| positives.contains(c)).count();
    hits as f64 / positives.len().max(1) as f64
}

/// FP of every prefix `S_1, …, S_len` of the chain.
pub fn prefix_false_positives(cand: &NestedCandidates, positives: &LabelSet) -> Vec<usize> {
    let mut fp = 0;
    cand.order()
        .iter()
        .map(|&c| {
            if !positives.contains(c) {
                fp += 1;
            }
            fp
        })
        .collect()
}

/// Worst-case FP over all candidate sets whose score is strictly below `t`;
/// zero when no set qualifies.
///
/// Computed as the max over every qualifying prefix, so it does not rely on
/// nestedness.
pub fn fp_max(cand: &NestedCandidates, positives: &LabelSet, t: f64) -> usize {
    prefix_false_positives(cand, positives)
        .into_iter()
        .zip(cand.set_scores())
        .filter(|&(_, &v)| v < t)
        .map(|(fp, _)| fp)
        .max()
        .unwrap_or(0)
}

/// Compact form of `t ↦ FP_max(t)`.
///
/// `levels[r]` is the value on `(breakpoints[r], breakpoints[r + 1]]`; the
/// value is 0 for `t <= breakpoints[0]`. Only breakpoints where the level
/// strictly increases are kept, so `levels` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FpStepFunction {
    breakpoints: Vec<f64>,
    levels: Vec<usize>,
}

impl FpStepFunction {
    pub fn new(cand: &NestedCandidates, positives: &LabelSet) -> Self {
        Self::from_scored_levels(cand.set_scores(), &prefix_false_positives(cand, positives))
    }

    /// Builds the step function of `t ↦ max { fps[j] : scores[j] < t }`.
    pub fn from_scored_levels(scores: &[f64], fps: &[usize]) -> Self {
        assert_eq!(scores.len(), fps.len(), "one FP count per score");
        let mut points: Vec<(f64, usize)> =
            scores.iter().copied().zip(fps.iter().copied()).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut breakpoints = Vec::new();
        let mut levels = Vec::new();
        let mut running = 0;
        let mut i = 0;
        while i < points.len() {
            // all sets sharing a score enter together
            let v = points[i].0;
            while i < points.len() && points[i].0 == v {
                running = running.max(points[i].1);
                i += 1;
            }
            if running > levels.last().copied().unwrap_or(0) {
                breakpoints.push(v);
                levels.push(running);
            }
        }
        Self {
            breakpoints,
            levels,
        }
    }

    pub fn eval(&self, t: f64) -> usize {
        let below = self.breakpoints.partition_point(|&b| b < t);
        if below == 0 {
            0
        } else {
            self.levels[below - 1]
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    /// Value as `t → +∞`.
    pub fn max_level(&self) -> usize {
        self.levels.last().copied().unwrap_or(0)
    }

    /// The smallest breakpoint past which the level exceeds `k`, if any.
    pub fn first_exceeding(&self, k: f64) -> Option<f64> {
        self.levels
            .iter()
            .position(|&l| l as f64 > k)
            .map(|r| self.breakpoints[r])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chain(order: Vec<usize>, v: Vec<f64>) -> NestedCandidates {
        let b = order.len().max(1);
        NestedCandidates::from_parts("t", order, v, b).unwrap()
    }

    #[test]
    fn fp_examples() {
        assert_eq!(false_positives(&[0, 2].into(), &[0, 1]), 1);
        assert_eq!(false_positives(&LabelSet::new(), &[0, 1]), 2);
        assert_eq!(false_positives(&[0].into(), &[0]), 0);
    }

    #[test]
    fn tpp_examples() {
        assert_eq!(true_positive_proportion(&[0, 2].into(), &[0]), 0.5);
        assert_eq!(true_positive_proportion(&LabelSet::new(), &[0, 1]), 0.0);
        assert_eq!(true_positive_proportion(&[0].into(), &[0, 1]), 1.0);
    }

    #[test]
    fn fp_max_examples() {
        // a=0, b=1, c=2 with z = {a, c}
        let cand = chain(vec![0, 1, 2], vec![0.1, 0.5, 0.9]);
        let z: LabelSet = [0, 2].into();
        // oracle: enumerate every prefix, keep those with v < t, take the max FP
        let brute = |t: f64| {
            (1..=3)
                .filter(|&j| cand.set_scores()[j - 1] < t)
                .map(|j| false_positives(&z, cand.prefix(j)))
                .max()
                .unwrap_or(0)
        };
        assert_eq!(brute(0.6), 1);
        assert_eq!(fp_max(&cand, &z, 0.6), 1);
        assert_eq!(fp_max(&cand, &z, 0.05), 0);
        assert_eq!(brute(f64::INFINITY), 1);
        assert_eq!(fp_max(&cand, &z, f64::INFINITY), 1);
    }

    #[test]
    fn step_function_matches_example_levels() {
        let step = FpStepFunction::from_scored_levels(&[0.2, 0.7], &[1, 2]);
        assert_eq!(step.breakpoints(), &[0.2, 0.7]);
        assert_eq!(step.levels(), &[1, 2]);
        assert_eq!(step.eval(0.2), 0);
        assert_eq!(step.eval(0.2000001), 1);
        assert_eq!(step.eval(0.7), 1);
        assert_eq!(step.eval(0.71), 2);
    }

    #[test]
    fn tied_scores_collapse_into_one_breakpoint() {
        let step = FpStepFunction::from_scored_levels(&[0.3, 0.3], &[0, 1]);
        assert_eq!(step.breakpoints(), &[0.3]);
        assert_eq!(step.eval(0.3), 0);
        assert_eq!(step.eval(0.31), 1);
    }

    #[test]
    fn empty_chain_is_constant_zero() {
        let step = FpStepFunction::from_scored_levels(&[], &[]);
        assert_eq!(step.eval(f64::INFINITY), 0);
        assert_eq!(step.eval(f64::NEG_INFINITY), 0);
        assert_eq!(step.max_level(), 0);
    }

    #[test]
    fn strict_comparison_excludes_set_at_its_own_score() {
        let cand = chain(vec![0, 1], vec![0.25, 0.5]);
        let z = LabelSet::new();
        assert_eq!(fp_max(&cand, &z, 0.5), 1);
        assert_eq!(fp_max(&cand, &z, libm::nextafter(0.5, 1.0)), 2);
    }

    #[test]
    fn first_exceeding_finds_crossing() {
        let step = FpStepFunction::from_scored_levels(&[0.1, 0.2, 0.3], &[1, 2, 3]);
        assert_eq!(step.first_exceeding(1.5), Some(0.2));
        assert_eq!(step.first_exceeding(3.0), None);
    }
}
