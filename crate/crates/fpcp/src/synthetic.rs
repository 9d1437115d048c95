//! A synthetic multi-label generator with known per-label probabilities.
//!
//! Each label has a true probability `p ~ Beta(2r / (1 - r), 2)`, whose mean
//! is the base rate `r`. The label is positive with probability `p`, and the
//! observed score is `sigmoid(logit(p) / miscalibration + noise · N(0, 1))`.

use fpcp_core::{LabelSet, ScoredExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TruthRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    pub n_labels: usize,
    /// Mean positive fraction, in `(0, 1)`.
    pub base_rate: f64,
    /// Standard deviation of Gaussian noise added in logit space.
    pub score_noise: f64,
    /// Temperature dividing the true logits; `1` leaves them unchanged.
    pub miscalibration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_examples: 10_000,
            n_labels: 100,
            base_rate: 0.15,
            score_noise: 0.5,
            miscalibration: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_labels == 0 {
            return Err(Error::Invalid("n_labels must be at least 1".into()));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::Invalid("base_rate must lie in (0, 1)".into()));
        }
        if !(self.score_noise.is_finite() && self.score_noise >= 0.0) {
            return Err(Error::Invalid(
                "score_noise must be finite and non-negative".into(),
            ));
        }
        if !(self.miscalibration.is_finite() && self.miscalibration > 0.0) {
            return Err(Error::Invalid(
                "miscalibration must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

/// Generated examples with the true probabilities behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub examples: Vec<ScoredExample>,
    pub truth: Vec<TruthRecord>,
}

fn observed_score(p: f64, spec: &SyntheticSpec, z: f64) -> f64 {
    if spec.score_noise == 0.0 && spec.miscalibration == 1.0 {
        return p;
    }
    let logit = (p / (1.0 - p)).ln();
    let x = logit / spec.miscalibration + spec.score_noise * z;
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generates `spec.n_examples` examples; example `i` draws from its own
/// random stream, so the output depends only on the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let alpha = 2.0 * spec.base_rate / (1.0 - spec.base_rate);
    let beta = Beta::new(alpha, 2.0)
        .map_err(|e| Error::Invalid(format!("invalid Beta parameters: {e}")))?;
    let (examples, truth) = (0..spec.n_examples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let id = format!("syn{i:06}");
            let mut p_true = Vec::with_capacity(spec.n_labels);
            let mut scores = Vec::with_capacity(spec.n_labels);
            let mut positives = Vec::new();
            for c in 0..spec.n_labels {
                let p: f64 = beta.sample(&mut rng);
                if rng.random_bool(p) {
                    positives.push(c);
                }
                let z: f64 = StandardNormal.sample(&mut rng);
                scores.push(observed_score(p, spec, z));
                p_true.push(p);
            }
            (
                ScoredExample::new(id.clone(), scores, LabelSet::from(positives)),
                TruthRecord { id, p_true },
            )
        })
        .unzip();
    Ok(Synthetic { examples, truth })
}
