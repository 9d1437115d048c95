//! Randomized-trial evaluation.
//!
//! Each trial shuffles the pool with its own random stream (keyed by the seed
//! and the trial index), fits the method on the first `round(frac · N)`
//! examples, and predicts on the rest. Trials run in parallel and are
//! collected in trial order, so reports do not depend on the thread count.

use fpcp_core::baselines::{
    fit_inner_threshold, fit_outer_threshold, fit_top_k_from_prefix_fps, inner_epsilon,
    predict_fixed, FixedRule,
};
use fpcp_core::calibration::{greedy_index, threshold_from_steps};
use fpcp_core::fp::{prefix_false_positives, FpStepFunction};
use fpcp_core::metrics::{auc, Auc, Outcome, SizePartition, Summary, TrialMetrics};
use fpcp_core::setfn::{f_k_delta, FpDistribution};
use fpcp_core::{rank_labels, NestedCandidates, PredictionSet, ScoredExample, Tolerance};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SetModel;

/// The prediction methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// FP-CP with a DeepSets set function.
    FpcpNn,
    /// FP-CP with max scoring.
    FpcpMax,
    /// FP-CP with Platt-calibrated sum scoring.
    FpcpSum,
    /// The top-k' labels, with k' fitted on calibration averages.
    Topk,
    /// Split-conformal inner sets.
    Inner,
    /// Split-conformal outer sets.
    Outer,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FpcpNn,
        Method::FpcpMax,
        Method::FpcpSum,
        Method::Topk,
        Method::Inner,
        Method::Outer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FpcpNn => "fpcp-nn",
            Method::FpcpMax => "fpcp-max",
            Method::FpcpSum => "fpcp-sum",
            Method::Topk => "topk",
            Method::Inner => "inner",
            Method::Outer => "outer",
        }
    }

    pub fn is_fpcp(self) -> bool {
        matches!(self, Method::FpcpNn | Method::FpcpMax | Method::FpcpSum)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown method {s:?}")))
    }
}

/// Everything a method needs besides the data and the tolerance.
#[derive(Debug, Clone)]
pub struct MethodConfig {
    pub method: Method,
    /// Truncation `B` of the candidate chains.
    pub b: usize,
    /// Set function for `fpcp-nn` (DeepSets) and `fpcp-sum` (Platt).
    pub model: Option<SetModel>,
    /// Outer-set miscoverage level.
    pub outer_epsilon: f64,
    /// Inner-set level; defaults to `k / B` (k-FP) or `delta` ((k, delta)-FP).
    pub inner_epsilon: Option<f64>,
    pub partition: SizePartition,
}

impl MethodConfig {
    pub fn new(method: Method, b: usize) -> Self {
        Self {
            method,
            b,
            model: None,
            outer_epsilon: 0.1,
            inner_epsilon: None,
            partition: SizePartition::default_for(b),
        }
    }

    pub fn with_model(mut self, model: SetModel) -> Self {
        self.model = Some(model);
        self
    }

    fn set_model(&self) -> Result<Option<&SetModel>> {
        let ok = match (self.method, &self.model) {
            (Method::FpcpMax, _) => return Ok(Some(&SetModel::Max)),
            (Method::FpcpNn, Some(m @ SetModel::DeepSets(_))) => m,
            (Method::FpcpSum, Some(m @ SetModel::Sum(_))) => m,
            (Method::FpcpNn | Method::FpcpSum, Some(m)) => {
                return Err(Error::Invalid(format!(
                    "method {} cannot use a {} model",
                    self.method,
                    m.name()
                )))
            }
            (Method::FpcpNn | Method::FpcpSum, None) => {
                return Err(Error::Invalid(format!(
                    "method {} needs a model",
                    self.method
                )))
            }
            _ => return Ok(None),
        };
        Ok(Some(ok))
    }
}

/// Per-example set scores for the FP-CP methods.
enum ChainScores {
    None,
    Fixed(Vec<Vec<f64>>),
    /// DeepSets distributions for every prefix; the readout depends on `k`.
    Distributions(Vec<Vec<FpDistribution>>),
}

/// Chains of a data pool that do not depend on the tolerance level.
pub struct Harness<'a> {
    data: &'a [ScoredExample],
    cfg: &'a MethodConfig,
    orders: Vec<Vec<usize>>,
    prefix_fps: Vec<Vec<usize>>,
    scores: ChainScores,
}

/// Set scores and FP step functions for one tolerance.
pub struct Pool {
    pub set_scores: Vec<Vec<f64>>,
    pub steps: Vec<FpStepFunction>,
}

/// How a trial's method was fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum Fit {
    Threshold {
        #[serde(with = "crate::artifacts::ext_real")]
        t_star: f64,
    },
    Topk {
        k_prime: usize,
    },
    Inner {
        #[serde(with = "crate::artifacts::ext_real")]
        tau: f64,
        sentinels: usize,
    },
    Outer {
        #[serde(with = "crate::artifacts::ext_real")]
        tau: f64,
        sentinels: usize,
    },
}

/// One trial's fitted rule and its test predictions.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub fit: Fit,
    /// Pool indices of the test examples, aligned with `predictions`.
    pub test: Vec<usize>,
    pub predictions: Vec<PredictionSet>,
}

/// Calibration and test indices for one trial.
pub fn trial_split(
    n: usize,
    split_frac: f64,
    seed: u64,
    trial: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 examples to split, got {n}"
        )));
    }
    if !(split_frac > 0.0 && split_frac < 1.0) {
        return Err(Error::Invalid("split fraction must lie in (0, 1)".into()));
    }
    let n_cal = ((split_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n_cal);
    Ok((idx, test))
}

fn ranked_chain(ex: &ScoredExample, b: usize) -> Vec<usize> {
    let mut order = rank_labels(&ex.scores);
    order.truncate(b);
    order
}

impl<'a> Harness<'a> {
    /// Ranks every example, counts prefix false positives and, for FP-CP
    /// methods, scores every chain. `kind` is any tolerance of the kind that
    /// will be evaluated; only its variant matters.
    pub fn new(data: &'a [ScoredExample], cfg: &'a MethodConfig, kind: Tolerance) -> Result<Self> {
        if cfg.b == 0 {
            return Err(Error::Invalid("B must be positive".into()));
        }
        let chains: Vec<(Vec<usize>, Vec<usize>)> = data
            .par_iter()
            .map(|ex| {
                let order = ranked_chain(ex, cfg.b);
                let fps = NestedCandidates::from_parts(
                    ex.id.clone(),
                    order.clone(),
                    vec![0.0; order.len()],
                    cfg.b,
                )
                .map(|c| prefix_false_positives(&c, &ex.positives))?;
                Ok((order, fps))
            })
            .collect::<Result<_>>()?;
        let (orders, prefix_fps): (Vec<_>, Vec<_>) = chains.into_iter().unzip();

        let ranked_scores =
            |i: usize| -> Vec<f64> { orders[i].iter().map(|&c| data[i].scores[c]).collect() };
        let scores = match (cfg.set_model()?, kind) {
            (None, _) => ChainScores::None,
            (Some(SetModel::DeepSets(model)), Tolerance::KDeltaFp { .. }) => {
                ChainScores::Distributions(
                    (0..data.len())
                        .into_par_iter()
                        .map(|i| model.chain_distributions(&ranked_scores(i)))
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
            (Some(m), _) => {
                let f = m.set_function(kind);
                ChainScores::Fixed(
                    (0..data.len())
                        .into_par_iter()
                        .map(|i| {
                            let v = f.chain_scores(&ranked_scores(i))?;
                            if let Some(j) = v.iter().position(|s| !s.is_finite()) {
                                return Err(fpcp_core::Error::NonFiniteSetScore(j + 1).into());
                            }
                            Ok(v)
                        })
                        .collect::<Result<_>>()?,
                )
            }
        };
        Ok(Self {
            data,
            cfg,
            orders,
            prefix_fps,
            scores,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[ScoredExample] {
        self.data
    }

    /// Label rank order (top `B`) of pool example `i`.
    pub fn order(&self, i: usize) -> &[usize] {
        &self.orders[i]
    }

    pub fn prefix_fps(&self, i: usize) -> &[usize] {
        &self.prefix_fps[i]
    }

    /// Set scores and step functions for `tolerance`.
    pub fn pool(&self, tolerance: Tolerance) -> Result<Pool> {
        let set_scores: Vec<Vec<f64>> = match (&self.scores, tolerance) {
            (ChainScores::None, _) => vec![Vec::new(); self.len()],
            (ChainScores::Fixed(v), _) => v.clone(),
            (ChainScores::Distributions(d), Tolerance::KDeltaFp { k, .. }) => d
                .par_iter()
                .map(|chain| chain.iter().map(|dist| f_k_delta(dist, k)).collect())
                .collect(),
            (ChainScores::Distributions(_), Tolerance::KFp { .. }) => {
                return Err(Error::Invalid(
                    "harness was prepared for (k, delta)-FP control".into(),
                ))
            }
        };
        let steps = if self.cfg.method.is_fpcp() {
            set_scores
                .par_iter()
                .zip(&self.prefix_fps)
                .map(|(v, fps)| FpStepFunction::from_scored_levels(v, fps))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Pool { set_scores, steps })
    }

    /// Fits on `cal` and predicts on `test` (both pool indices).
    pub fn run_trial(
        &self,
        pool: &Pool,
        tolerance: Tolerance,
        cal: &[usize],
        test: &[usize],
    ) -> Result<TrialOutput> {
        let b = self.cfg.b;
        let fit = match self.cfg.method {
            Method::FpcpNn | Method::FpcpMax | Method::FpcpSum => {
                let steps: Vec<&FpStepFunction> = cal.iter().map(|&i| &pool.steps[i]).collect();
                Fit::Threshold {
                    t_star: threshold_from_steps(&steps, b, tolerance)?,
                }
            }
            Method::Topk => {
                let fps: Vec<&[usize]> =
                    cal.iter().map(|&i| self.prefix_fps[i].as_slice()).collect();
                Fit::Topk {
                    k_prime: fit_top_k_from_prefix_fps(&fps, b, tolerance)?.k_prime,
                }
            }
            Method::Inner | Method::Outer => {
                let cal_data: Vec<ScoredExample> =
                    cal.iter().map(|&i| self.data[i].clone()).collect();
                if self.cfg.method == Method::Inner {
                    let eps = self
                        .cfg
                        .inner_epsilon
                        .unwrap_or_else(|| inner_epsilon(tolerance, b));
                    let f = fit_inner_threshold(&cal_data, eps)?;
                    Fit::Inner {
                        tau: f.tau,
                        sentinels: f.sentinels,
                    }
                } else {
                    let f = fit_outer_threshold(&cal_data, self.cfg.outer_epsilon)?;
                    Fit::Outer {
                        tau: f.tau,
                        sentinels: f.sentinels,
                    }
                }
            }
        };
        let predictions = test.iter().map(|&i| self.predict(pool, &fit, i)).collect();
        Ok(TrialOutput {
            fit,
            test: test.to_vec(),
            predictions,
        })
    }

    fn predict(&self, pool: &Pool, fit: &Fit, i: usize) -> PredictionSet {
        let ex = &self.data[i];
        let b = self.cfg.b;
        match *fit {
            Fit::Threshold { t_star } => PredictionSet::from_prefix(
                ex.id.clone(),
                &self.orders[i],
                greedy_index(&pool.set_scores[i], t_star),
            ),
            Fit::Topk { k_prime } => predict_fixed(
                ex,
                &FixedRule::TopK(fpcp_core::baselines::TopKRule { k_prime }),
                b,
            ),
            Fit::Inner { tau, .. } => predict_fixed(ex, &FixedRule::Inner { tau }, b),
            Fit::Outer { tau, .. } => predict_fixed(ex, &FixedRule::Outer { tau }, b),
        }
    }

    /// Metrics of one trial's predictions.
    pub fn trial_record(
        &self,
        trial: usize,
        tolerance: Tolerance,
        out: &TrialOutput,
    ) -> TrialRecord {
        let outcomes: Vec<Outcome> = out
            .test
            .iter()
            .zip(&out.predictions)
            .map(|(&i, p)| Outcome::of(p, &self.data[i].positives))
            .collect();
        let n = outcomes.len().max(1) as f64;
        let covered = out
            .test
            .iter()
            .zip(&out.predictions)
            .filter(|(&i, p)| self.data[i].positives.iter().all(|c| p.labels.contains(&c)))
            .count();
        TrialRecord {
            trial,
            metrics: TrialMetrics::from_outcomes(
                &outcomes,
                tolerance.k(),
                tolerance.delta(),
                &self.cfg.partition,
            ),
            frac_no_fp: outcomes.iter().filter(|o| o.fp == 0).count() as f64 / n,
            coverage: covered as f64 / n,
            fit: out.fit,
        }
    }

    /// Runs `trials` trials for one tolerance.
    pub fn run(
        &self,
        pool: &Pool,
        tolerance: Tolerance,
        trials: usize,
        split_frac: f64,
        seed: u64,
    ) -> Result<TrialReport> {
        if trials == 0 {
            return Err(Error::Invalid("trials must be at least 1".into()));
        }
        let per_trial = (0..trials)
            .into_par_iter()
            .map(|t| {
                let (cal, test) = trial_split(self.len(), split_frac, seed, t as u64)?;
                let out = self.run_trial(pool, tolerance, &cal, &test)?;
                Ok(self.trial_record(t, tolerance, &out))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialReport::new(
            self.cfg.method,
            tolerance,
            split_frac,
            seed,
            per_trial,
        ))
    }
}

/// Metrics of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    #[serde(flatten)]
    pub metrics: TrialMetrics,
    /// Fraction of test predictions without any false positive.
    pub frac_no_fp: f64,
    /// Fraction of test predictions containing every true label.
    pub coverage: f64,
    pub fit: Fit,
}

/// Summaries across trials of each per-trial metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tpr: Summary,
    pub avg_fp: Summary,
    pub avg_size: Summary,
    pub ssfp_k: Summary,
    pub ssfp_k_delta: Option<Summary>,
    pub frac_fp_le_k: Summary,
    pub frac_no_fp: Summary,
    pub coverage: Summary,
}

impl Aggregate {
    fn of(records: &[TrialRecord]) -> Self {
        let s = |f: &dyn Fn(&TrialRecord) -> f64| {
            Summary::of(&records.iter().map(f).collect::<Vec<_>>())
        };
        let kd: Option<Vec<f64>> = records.iter().map(|r| r.metrics.ssfp_k_delta).collect();
        Self {
            tpr: s(&|r| r.metrics.tpr),
            avg_fp: s(&|r| r.metrics.avg_fp),
            avg_size: s(&|r| r.metrics.avg_size),
            ssfp_k: s(&|r| r.metrics.ssfp_k),
            ssfp_k_delta: kd.map(|v| Summary::of(&v)),
            frac_fp_le_k: s(&|r| r.metrics.frac_fp_le_k),
            frac_no_fp: s(&|r| r.frac_no_fp),
            coverage: s(&|r| r.coverage),
        }
    }
}

/// Per-trial metrics for one method and tolerance, with their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub method: Method,
    pub k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub split_frac: f64,
    pub seed: u64,
    pub per_trial: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

impl TrialReport {
    fn new(
        method: Method,
        tolerance: Tolerance,
        split_frac: f64,
        seed: u64,
        per_trial: Vec<TrialRecord>,
    ) -> Self {
        Self {
            method,
            k: tolerance.k(),
            delta: tolerance.delta(),
            split_frac,
            seed,
            aggregate: Aggregate::of(&per_trial),
            per_trial,
        }
    }
}

/// Runs the full trial protocol for one tolerance.
pub fn run_trials(
    data: &[ScoredExample],
    cfg: &MethodConfig,
    tolerance: Tolerance,
    trials: usize,
    split_frac: f64,
    seed: u64,
) -> Result<TrialReport> {
    let harness = Harness::new(data, cfg, tolerance)?;
    let pool = harness.pool(tolerance)?;
    harness.run(&pool, tolerance, trials, split_frac, seed)
}

/// Reports across a grid of `k` values, with the area under mean TPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub method: Method,
    pub k_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub reports: Vec<TrialReport>,
    pub tpr_auc: Auc,
}

/// Parses `lo:hi` (integers), `lo:hi:step`, or a comma-separated list.
pub fn parse_k_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Invalid(format!("invalid k grid {text:?}"));
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let (lo, hi, step) = match parts[..] {
            [lo, hi] => (lo, hi, 1.0),
            [lo, hi, step] => (lo, hi, step),
            _ => return Err(bad()),
        };
        if !(step > 0.0 && lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| lo + i as f64 * step).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

/// Runs [`run_trials`] at every `k` in `k_grid` on the same trial splits.
pub fn sweep_k(
    data: &[ScoredExample],
    cfg: &MethodConfig,
    k_grid: &[f64],
    delta: Option<f64>,
    trials: usize,
    split_frac: f64,
    seed: u64,
) -> Result<SweepReport> {
    if k_grid.is_empty() {
        return Err(Error::Invalid("k grid is empty".into()));
    }
    if k_grid
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::Invalid("k grid must be strictly ascending".into()));
    }
    if k_grid.iter().any(|&k| !(k > 0.0 && k <= cfg.b as f64)) {
        return Err(Error::Invalid(format!(
            "k grid values must lie in (0, {}]",
            cfg.b
        )));
    }
    let tol = |k: f64| -> Result<Tolerance> {
        Ok(match delta {
            Some(d) => Tolerance::k_delta_fp(k, d)?,
            None => Tolerance::k_fp(k)?,
        })
    };
    let harness = Harness::new(data, cfg, tol(k_grid[0])?)?;
    let reports = k_grid
        .iter()
        .map(|&k| {
            let t = tol(k)?;
            let pool = harness.pool(t)?;
            harness.run(&pool, t, trials, split_frac, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let tprs: Vec<f64> = reports.iter().map(|r| r.aggregate.tpr.mean).collect();
    Ok(SweepReport {
        method: cfg.method,
        k_grid: k_grid.to_vec(),
        delta,
        tpr_auc: auc(k_grid, &tprs)?,
        reports,
    })
}
