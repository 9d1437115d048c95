//! Threshold calibration for k-FP and (k, delta)-FP control, greedy
//! prediction, and the split-conformal quantile used by the baselines.
//!
//! For calibration chains `i = 1..n` the calibrated thresholds are
//!
//! ```text
//! T_k       = sup { t : (B + Σ_i FP_max_i(t)) / (n + 1) <= k }
//! T_{k,δ}   = sup { t : Σ_i 1{FP_max_i(t) <= k} / (n + 1) >= 1 - δ }
//! ```
//!
//! Each `FP_max_i` is a non-decreasing, left-continuous step function of `t`
//! (strict `v_j < t`), so the feasible set is `(-∞, t*]` and `t*` is one of
//! the calibration set scores, or `±∞`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fp::{prefix_false_positives, FpStepFunction};
use crate::math::ceil;
use crate::types::{CalibratedThreshold, LabelSet, NestedCandidates, PredictionSet, Tolerance};

/// Calibration chains with their true label sets; all share `B`.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    items: Vec<(NestedCandidates, LabelSet)>,
    steps: Vec<FpStepFunction>,
    truncation_b: usize,
}

impl CalibrationSet {
    pub fn new(items: Vec<(NestedCandidates, LabelSet)>) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyCalibration)?;
        let truncation_b = first.0.truncation_b();
        if let Some((c, _)) = items.iter().find(|(c, _)| c.truncation_b() != truncation_b) {
            return Err(Error::TruncationMismatch {
                expected: truncation_b,
                found: c.truncation_b(),
            });
        }
        let steps = items
            .iter()
            .map(|(c, z)| FpStepFunction::new(c, z))
            .collect();
        Ok(Self {
            items,
            steps,
            truncation_b,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn truncation_b(&self) -> usize {
        self.truncation_b
    }

    pub fn items(&self) -> &[(NestedCandidates, LabelSet)] {
        &self.items
    }

    pub fn step_functions(&self) -> &[FpStepFunction] {
        &self.steps
    }
}

/// The k-FP feasibility condition.
#[inline]
pub fn mean_condition(truncation_b: usize, fp_sum: usize, n: usize, k: f64) -> bool {
    (truncation_b + fp_sum) as f64 / (n + 1) as f64 <= k
}

/// The (k, delta)-FP feasibility condition.
#[inline]
pub fn quantile_condition(within_k: usize, n: usize, delta: f64) -> bool {
    within_k as f64 / (n + 1) as f64 >= 1.0 - delta
}

/// Supremum threshold from precomputed step functions.
///
/// `steps` holds one step function per calibration example (`n = steps.len()`).
pub fn threshold_from_steps(
    steps: &[&FpStepFunction],
    truncation_b: usize,
    tolerance: Tolerance,
) -> Result<f64> {
    tolerance.check()?;
    let n = steps.len();
    if n == 0 {
        return Err(Error::EmptyCalibration);
    }

    // (score, increment of the aggregate) at every point where it changes
    let mut events: Vec<(f64, usize)> = match tolerance {
        Tolerance::KFp { .. } => steps
            .iter()
            .flat_map(|s| {
                let mut prev = 0;
                s.breakpoints().iter().zip(s.levels()).map(move |(&t, &l)| {
                    let inc = l - prev;
                    prev = l;
                    (t, inc)
                })
            })
            .collect(),
        Tolerance::KDeltaFp { k, .. } => steps
            .iter()
            .filter_map(|s| s.first_exceeding(k).map(|t| (t, 1)))
            .collect(),
    };
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    // aggregate[r] holds on (c_r, c_{r+1}], with aggregate[0] below every score
    let mut values: Vec<f64> = Vec::with_capacity(events.len());
    let mut aggregate: Vec<usize> = Vec::with_capacity(events.len() + 1);
    aggregate.push(0);
    for (t, inc) in events {
        if values.last() == Some(&t) {
            *aggregate.last_mut().expect("non-empty") += inc;
        } else {
            let next = aggregate.last().copied().unwrap_or(0) + inc;
            values.push(t);
            aggregate.push(next);
        }
    }

    let feasible = |agg: usize| match tolerance {
        Tolerance::KFp { k } => mean_condition(truncation_b, agg, n, k),
        Tolerance::KDeltaFp { delta, .. } => quantile_condition(n - agg, n, delta),
    };

    // feasibility is monotone: true on a prefix of `aggregate`
    let n_feasible = aggregate.partition_point(|&a| feasible(a));
    Ok(if n_feasible == 0 {
        f64::NEG_INFINITY
    } else if n_feasible == aggregate.len() {
        f64::INFINITY
    } else {
        values[n_feasible - 1]
    })
}

pub fn calibrate(cal: &CalibrationSet, tolerance: Tolerance) -> Result<CalibratedThreshold> {
    let steps: Vec<&FpStepFunction> = cal.steps.iter().collect();
    let t_star = threshold_from_steps(&steps, cal.truncation_b, tolerance)?;
    Ok(CalibratedThreshold {
        t_star,
        tolerance,
        n_calibration: cal.len(),
        truncation_b: cal.truncation_b,
    })
}

/// `T_k`.
pub fn calibrate_t_k(cal: &CalibrationSet, k: f64) -> Result<CalibratedThreshold> {
    calibrate(cal, Tolerance::k_fp(k)?)
}

/// `T_{k, delta}`.
pub fn calibrate_t_k_delta(
    cal: &CalibrationSet,
    k: f64,
    delta: f64,
) -> Result<CalibratedThreshold> {
    calibrate(cal, Tolerance::k_delta_fp(k, delta)?)
}

/// The same thresholds computed through the reflected problem.
///
/// With `FP⁻(t) = FP_max(-t) = max { FP_j : -v_j > t }` (non-increasing and
/// right-continuous), the feasible set of the reflected condition is
/// `[T', ∞)` and this returns its infimum `T'`. `T' = -T` always holds.
/// Works from the raw chains and does not share the search above.
pub fn calibrate_reflected(cal: &CalibrationSet, tolerance: Tolerance) -> Result<f64> {
    tolerance.check()?;
    let n = cal.len();
    let b = cal.truncation_b;

    // per item: reflected scores w_j = -v_j with their prefix FP counts
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    for (item, (cand, z)) in cal.items.iter().enumerate() {
        for (&v, fp) in cand
            .set_scores()
            .iter()
            .zip(prefix_false_positives(cand, z))
        {
            events.push((-v, fp, item));
        }
    }
    // sweep t downward: set j joins once t < w_j
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut current = alloc::vec![0usize; n];
    let mut fp_sum = 0usize;
    let mut within = n;
    let holds = |fp_sum: usize, within: usize| match tolerance {
        Tolerance::KFp { k } => mean_condition(b, fp_sum, n, k),
        Tolerance::KDeltaFp { delta, .. } => quantile_condition(within, n, delta),
    };
    if !holds(fp_sum, within) {
        // infeasible even for t >= max w
        return Ok(f64::INFINITY);
    }
    let k = tolerance.k();
    let mut i = 0;
    while i < events.len() {
        let w = events[i].0;
        while i < events.len() && events[i].0 == w {
            let (_, fp, item) = events[i];
            if fp > current[item] {
                let was_within = current[item] as f64 <= k;
                fp_sum += fp - current[item];
                current[item] = fp;
                if was_within && fp as f64 > k {
                    within -= 1;
                }
            }
            i += 1;
        }
        // on [next w, w) the aggregate now reflects every set with w_j >= w
        if !holds(fp_sum, within) {
            return Ok(w);
        }
    }
    Ok(f64::NEG_INFINITY)
}

/// `Quantile(1 - epsilon; V ∪ {+∞})`: the `⌈(1 - ε)(n + 1)⌉`-th smallest.
pub fn split_cp_quantile(nonconformity: &[f64], epsilon: f64) -> Result<f64> {
    if nonconformity.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)"));
    }
    if nonconformity.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "nonconformity scores must not be NaN",
        ));
    }
    let n = nonconformity.len();
    let level = (1.0 - epsilon) * (n + 1) as f64;
    // absorb representation error such as 0.7 * 10 = 7.000000000000001
    let rank = ceil(level - 1e-9 * level.max(1.0)).max(1.0) as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = nonconformity.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// The largest chain prefix whose set score is strictly below `t*`.
pub fn predict_greedy(
    cand: &NestedCandidates,
    threshold: &CalibratedThreshold,
) -> Result<PredictionSet> {
    if cand.truncation_b() != threshold.truncation_b {
        return Err(Error::TruncationMismatch {
            expected: threshold.truncation_b,
            found: cand.truncation_b(),
        });
    }
    let chain_index = greedy_index(cand.set_scores(), threshold.t_star);
    Ok(PredictionSet::from_prefix(
        cand.example_id(),
        cand.order(),
        chain_index,
    ))
}

/// `max { j : v_j < t }`, or 0 when no prefix qualifies.
pub fn greedy_index(set_scores: &[f64], t_star: f64) -> usize {
    set_scores
        .iter()
        .rposition(|&v| v < t_star)
        .map_or(0, |j| j + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    /// Builds a chain whose prefix FP counts follow `fps` (positives are the
    /// labels whose inclusion does not raise the count).
    fn item(v: Vec<f64>, fps: &[usize], b: usize) -> (NestedCandidates, LabelSet) {
        let order: Vec<usize> = (0..v.len()).collect();
        let mut prev = 0;
        let positives: LabelSet = fps
            .iter()
            .enumerate()
            .filter_map(|(c, &f)| {
                let p = f == prev;
                prev = f;
                p.then_some(c)
            })
            .collect();
        let cand = NestedCandidates::from_parts("i", order, v, b).unwrap();
        assert_eq!(prefix_false_positives(&cand, &positives), fps);
        (cand, positives)
    }

    fn grid_sup(cal: &CalibrationSet, tol: Tolerance) -> f64 {
        // dense scan: the largest grid point satisfying the condition
        let n = cal.len();
        let cond = |t: f64| {
            let fps: Vec<usize> = cal
                .items()
                .iter()
                .map(|(c, z)| crate::fp::fp_max(c, z, t))
                .collect();
            match tol {
                Tolerance::KFp { k } => mean_condition(cal.truncation_b(), fps.iter().sum(), n, k),
                Tolerance::KDeltaFp { k, delta } => {
                    quantile_condition(fps.iter().filter(|&&f| f as f64 <= k).count(), n, delta)
                }
            }
        };
        if cond(f64::INFINITY) {
            return f64::INFINITY;
        }
        (0..=2000)
            .map(|i| i as f64 / 2000.0)
            .filter(|&t| cond(t))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn t_k_example() {
        let cal = CalibrationSet::new(vec![item(vec![0.2, 0.7], &[1, 2], 2)]).unwrap();
        let tol = Tolerance::k_fp(1.5).unwrap();
        assert_eq!(grid_sup(&cal, tol), 0.7);
        assert_eq!(calibrate_t_k(&cal, 1.5).unwrap().t_star, 0.7);
    }

    #[test]
    fn t_k_infeasible_when_b_dominates() {
        let cal = CalibrationSet::new(vec![item(vec![0.2, 0.7], &[1, 2], 100)]).unwrap();
        assert_eq!(calibrate_t_k(&cal, 0.5).unwrap().t_star, f64::NEG_INFINITY);
    }

    #[test]
    fn t_k_unbounded_when_slack() {
        let cal = CalibrationSet::new(vec![item(vec![0.2, 0.7], &[1, 2], 2)]).unwrap();
        assert_eq!(calibrate_t_k(&cal, 10.0).unwrap().t_star, f64::INFINITY);
    }

    #[test]
    fn t_k_delta_example() {
        let cal = CalibrationSet::new(vec![
            item(vec![0.1, 0.4], &[0, 1], 2),
            item(vec![0.2, 0.5], &[1, 2], 2),
            item(vec![0.3, 0.6], &[0, 0], 2),
        ])
        .unwrap();
        let tol = Tolerance::k_delta_fp(1.0, 0.25).unwrap();
        assert_eq!(grid_sup(&cal, tol), 0.5);
        assert_eq!(calibrate_t_k_delta(&cal, 1.0, 0.25).unwrap().t_star, 0.5);
    }

    #[test]
    fn t_k_delta_infeasible_with_one_example() {
        let cal = CalibrationSet::new(vec![item(vec![0.3], &[0], 1)]).unwrap();
        assert_eq!(
            calibrate_t_k_delta(&cal, 1.0, 0.1).unwrap().t_star,
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn t_k_delta_unbounded_without_false_positives() {
        let cal = CalibrationSet::new(vec![
            item(vec![0.1, 0.4], &[0, 0], 2),
            item(vec![0.2, 0.5], &[0, 0], 2),
        ])
        .unwrap();
        assert_eq!(
            calibrate_t_k_delta(&cal, 1.0, 0.5).unwrap().t_star,
            f64::INFINITY
        );
    }

    #[test]
    fn reflected_matches_on_examples() {
        let cal = CalibrationSet::new(vec![
            item(vec![0.1, 0.4], &[0, 1], 2),
            item(vec![0.2, 0.5], &[1, 2], 2),
            item(vec![0.3, 0.6], &[0, 0], 2),
        ])
        .unwrap();
        for tol in [
            Tolerance::k_delta_fp(1.0, 0.25).unwrap(),
            Tolerance::k_fp(1.2).unwrap(),
            Tolerance::k_fp(0.1).unwrap(),
            Tolerance::k_fp(50.0).unwrap(),
        ] {
            let t = calibrate(&cal, tol).unwrap().t_star;
            assert_eq!(calibrate_reflected(&cal, tol).unwrap(), -t);
        }
    }

    #[test]
    fn empty_calibration_is_an_error() {
        assert_eq!(
            CalibrationSet::new(vec![]).unwrap_err(),
            Error::EmptyCalibration
        );
        assert_eq!(
            threshold_from_steps(&[], 2, Tolerance::k_fp(1.0).unwrap()),
            Err(Error::EmptyCalibration)
        );
    }

    #[test]
    fn mismatched_truncation_is_an_error() {
        let r = CalibrationSet::new(vec![item(vec![0.1], &[0], 2), item(vec![0.1], &[0], 3)]);
        assert_eq!(
            r.unwrap_err(),
            Error::TruncationMismatch {
                expected: 2,
                found: 3
            }
        );
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        // rank arithmetic oracle: ceil(0.9 * 10) = 9, ceil(0.95 * 10) = 10 > n
        assert_eq!(split_cp_quantile(&v, 0.1).unwrap(), 9.0);
        assert_eq!(split_cp_quantile(&v, 0.05).unwrap(), f64::INFINITY);
        assert_eq!(split_cp_quantile(&[5.0], 0.5).unwrap(), 5.0);
        assert!(split_cp_quantile(&[], 0.5).is_err());
        assert!(split_cp_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn quantile_tolerates_representation_error() {
        // (1 - 0.3) * 10 evaluates to 7.000000000000001
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        assert_eq!(split_cp_quantile(&v, 0.3).unwrap(), 7.0);
    }

    #[test]
    fn greedy_examples() {
        let cand =
            NestedCandidates::from_parts("g", vec![4, 2, 0], vec![0.1, 0.5, 0.9], 3).unwrap();
        let mut th = CalibratedThreshold {
            t_star: 0.7,
            tolerance: Tolerance::k_fp(1.0).unwrap(),
            n_calibration: 1,
            truncation_b: 3,
        };
        let p = predict_greedy(&cand, &th).unwrap();
        assert_eq!((p.chain_index, p.labels.as_slice()), (2, &[4, 2][..]));
        th.t_star = f64::NEG_INFINITY;
        assert!(predict_greedy(&cand, &th).unwrap().labels.is_empty());
        th.t_star = f64::INFINITY;
        assert_eq!(predict_greedy(&cand, &th).unwrap().chain_index, 3);
        th.t_star = 0.5;
        assert_eq!(predict_greedy(&cand, &th).unwrap().chain_index, 1);
        th.truncation_b = 4;
        assert!(predict_greedy(&cand, &th).is_err());
    }

    #[test]
    fn greedy_takes_largest_index_for_non_monotone_scores() {
        assert_eq!(greedy_index(&[0.1, 0.8, 0.2, 0.9], 0.5), 3);
    }
}
