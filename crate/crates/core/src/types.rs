use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::setfn::SetFunction;

/// Sorted, duplicate-free set of dense label indices.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(from = "Vec<usize>", into = "Vec<usize>"))]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl From<Vec<usize>> for LabelSet {
    fn from(mut labels: Vec<usize>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        Self(labels)
    }
}

impl From<LabelSet> for Vec<usize> {
    fn from(set: LabelSet) -> Self {
        set.0
    }
}

impl<const N: usize> From<[usize; N]> for LabelSet {
    fn from(labels: [usize; N]) -> Self {
        Self::from(labels.to_vec())
    }
}

impl From<&[usize]> for LabelSet {
    fn from(labels: &[usize]) -> Self {
        Self::from(labels.to_vec())
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self::from(iter.into_iter().collect::<Vec<_>>())
    }
}

/// One multi-label instance: a score per candidate label plus the true label set.
///
/// `scores[c]` estimates the probability that label `c` is a true positive.
/// `positives` may be empty.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoredExample {
    pub id: String,
    pub scores: Vec<f64>,
    pub positives: LabelSet,
}

impl ScoredExample {
    /// Builds an example without checking invariants; see [`validate_example`].
    pub fn new(id: impl Into<String>, scores: Vec<f64>, positives: impl Into<LabelSet>) -> Self {
        Self {
            id: id.into(),
            scores,
            positives: positives.into(),
        }
    }

    /// Clamps finite scores into `[0, 1]` and validates the rest.
    ///
    /// Returns the example with the number of scores that had to be clamped.
    /// Non-finite scores and out-of-range positives are errors.
    pub fn sanitized(
        id: impl Into<String>,
        mut scores: Vec<f64>,
        positives: impl Into<LabelSet>,
    ) -> Result<(Self, usize)> {
        let mut clamped = 0;
        for s in scores.iter_mut() {
            if s.is_finite() && !(0.0..=1.0).contains(s) {
                *s = s.clamp(0.0, 1.0);
                clamped += 1;
            }
        }
        let ex = Self::new(id, scores, positives);
        let violations = validate_example(&ex);
        if violations.is_empty() {
            Ok((ex, clamped))
        } else {
            Err(Error::InvalidExample(violations))
        }
    }

    pub fn n_labels(&self) -> usize {
        self.scores.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Violation {
    PositiveOutOfRange { label: usize, n_labels: usize },
    NonFiniteScore { index: usize },
    ScoreOutOfRange { index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PositiveOutOfRange { label, n_labels } => write!(
                f,
                "positive index out of range: {label} >= {n_labels} labels"
            ),
            Violation::NonFiniteScore { index } => write!(f, "non-finite score at index {index}"),
            Violation::ScoreOutOfRange { index, value } => {
                write!(f, "score out of [0, 1] at index {index}: {value}")
            }
        }
    }
}

/// Every invariant violation of `ex`; empty when the example is well formed.
pub fn validate_example(ex: &ScoredExample) -> Vec<Violation> {
    let mut out = Vec::new();
    for (index, &s) in ex.scores.iter().enumerate() {
        if !s.is_finite() {
            out.push(Violation::NonFiniteScore { index });
        } else if !(0.0..=1.0).contains(&s) {
            out.push(Violation::ScoreOutOfRange { index, value: s });
        }
    }
    let n_labels = ex.scores.len();
    for label in ex.positives.iter().filter(|&l| l >= n_labels) {
        out.push(Violation::PositiveOutOfRange { label, n_labels });
    }
    out
}

/// Label indices sorted by descending score, ties broken by ascending index.
pub fn rank_labels(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// The nested chain `S_1 ⊂ S_2 ⊂ …` of score-ranked prefixes, truncated to `B`
/// labels, with one set nonconformity score per prefix.
///
/// `set_scores[j - 1]` scores the prefix `order[..j]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NestedCandidates {
    example_id: String,
    order: Vec<usize>,
    set_scores: Vec<f64>,
    truncation_b: usize,
}

impl NestedCandidates {
    /// Ranks the labels of `ex`, keeps the top `truncation_b`, and scores each
    /// prefix with `set_fn`.
    pub fn build<F: SetFunction + ?Sized>(
        ex: &ScoredExample,
        truncation_b: usize,
        set_fn: &F,
    ) -> Result<Self> {
        if truncation_b == 0 {
            return Err(Error::InvalidArgument("truncation B must be positive"));
        }
        let mut order = rank_labels(&ex.scores);
        order.truncate(truncation_b);
        let ranked: Vec<f64> = order.iter().map(|&c| ex.scores[c]).collect();
        let set_scores = set_fn.chain_scores(&ranked)?;
        Self::from_parts(ex.id.clone(), order, set_scores, truncation_b)
    }

    pub fn from_parts(
        example_id: impl Into<String>,
        order: Vec<usize>,
        set_scores: Vec<f64>,
        truncation_b: usize,
    ) -> Result<Self> {
        if truncation_b == 0 {
            return Err(Error::InvalidArgument("truncation B must be positive"));
        }
        if order.len() != set_scores.len() {
            return Err(Error::InvalidCandidates(
                "one set score per prefix is required",
            ));
        }
        if order.len() > truncation_b {
            return Err(Error::InvalidCandidates("chain is longer than B"));
        }
        let mut seen: Vec<usize> = order.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidCandidates("duplicate label in order"));
        }
        if let Some(j) = set_scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSetScore(j + 1));
        }
        Ok(Self {
            example_id: example_id.into(),
            order,
            set_scores,
            truncation_b,
        })
    }

    pub fn example_id(&self) -> &str {
        &self.example_id
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn set_scores(&self) -> &[f64] {
        &self.set_scores
    }

    pub fn truncation_b(&self) -> usize {
        self.truncation_b
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The prefix set `S_j` (`j = 0` is the empty set).
    pub fn prefix(&self, j: usize) -> &[usize] {
        &self.order[..j.min(self.order.len())]
    }
}

/// Error tolerance for the false-positive count.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Tolerance {
    /// `E[FP] <= k`.
    KFp { k: f64 },
    /// `P(FP <= k) >= 1 - delta`.
    KDeltaFp { k: f64, delta: f64 },
}

impl Tolerance {
    pub fn k_fp(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidTolerance(
                "k must be a finite positive number",
            ));
        }
        Ok(Tolerance::KFp { k })
    }

    pub fn k_delta_fp(k: f64, delta: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidTolerance(
                "k must be a finite positive number",
            ));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidTolerance("delta must lie in (0, 1)"));
        }
        Ok(Tolerance::KDeltaFp { k, delta })
    }

    pub fn k(&self) -> f64 {
        match *self {
            Tolerance::KFp { k } | Tolerance::KDeltaFp { k, .. } => k,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match *self {
            Tolerance::KFp { .. } => None,
            Tolerance::KDeltaFp { delta, .. } => Some(delta),
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        match *self {
            Tolerance::KFp { k } => Self::k_fp(k).map(|_| ()),
            Tolerance::KDeltaFp { k, delta } => Self::k_delta_fp(k, delta).map(|_| ()),
        }
    }
}

/// A calibrated threshold `t*`. `-inf` forces empty predictions and `+inf`
/// admits the full chain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CalibratedThreshold {
    pub t_star: f64,
    pub tolerance: Tolerance,
    pub n_calibration: usize,
    pub truncation_b: usize,
}

/// A prediction: the prefix of the ranked chain of length `chain_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PredictionSet {
    pub example_id: String,
    /// Labels in rank order.
    pub labels: Vec<usize>,
    pub chain_index: usize,
}

impl PredictionSet {
    pub fn from_prefix(example_id: impl Into<String>, order: &[usize], chain_index: usize) -> Self {
        Self {
            example_id: example_id.into(),
            labels: order[..chain_index].to_vec(),
            chain_index,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn well_formed_example_has_no_violations() {
        let ex = ScoredExample::new("a", vec![0.9, 0.1], [0]);
        assert!(validate_example(&ex).is_empty());
    }

    #[test]
    fn out_of_range_positive_is_reported() {
        let ex = ScoredExample::new("a", vec![0.9], [3]);
        let v = validate_example(&ex);
        assert_eq!(
            v,
            vec![Violation::PositiveOutOfRange {
                label: 3,
                n_labels: 1
            }]
        );
        assert!(alloc::format!("{}", v[0]).starts_with("positive index out of range"));
    }

    #[test]
    fn nan_score_is_reported() {
        let ex = ScoredExample::new("a", vec![0.9, f64::NAN], LabelSet::new());
        let v = validate_example(&ex);
        assert_eq!(v, vec![Violation::NonFiniteScore { index: 1 }]);
        assert!(alloc::format!("{}", v[0]).starts_with("non-finite score"));
    }

    #[test]
    fn sanitize_clamps_rounding_noise_but_rejects_infinity() {
        let (ex, clamped) =
            ScoredExample::sanitized("a", vec![1.000_000_1, -0.0001, 0.5], [0]).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(ex.scores, vec![1.0, 0.0, 0.5]);
        assert!(ScoredExample::sanitized("a", vec![f64::INFINITY], LabelSet::new()).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_labels(&[0.2, 0.9, 0.2, 0.5]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn from_parts_checks_invariants() {
        assert!(NestedCandidates::from_parts("x", vec![0, 0], vec![0.1, 0.2], 5).is_err());
        assert!(NestedCandidates::from_parts("x", vec![0, 1], vec![0.1], 5).is_err());
        assert!(NestedCandidates::from_parts("x", vec![0, 1, 2], vec![0.1; 3], 2).is_err());
        assert_eq!(
            NestedCandidates::from_parts("x", vec![0, 1], vec![0.1, f64::INFINITY], 5),
            Err(Error::NonFiniteSetScore(2))
        );
    }

    #[test]
    fn tolerance_bounds() {
        assert!(Tolerance::k_fp(0.0).is_err());
        assert!(Tolerance::k_delta_fp(1.0, 1.0).is_err());
        assert!(Tolerance::k_delta_fp(1.0, 0.0).is_err());
        assert_eq!(Tolerance::k_delta_fp(2.0, 0.1).unwrap().delta(), Some(0.1));
    }
}
