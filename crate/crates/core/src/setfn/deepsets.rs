//! DeepSets set function `Ψ(S) = softmax(dec(Σ_{y ∈ S} enc(φ(y))))`.
//!
//! `φ` is the scalar label score. Both `enc` and `dec` are two affine layers
//! with `tanh` in between (`enc` also ends in `tanh`); the decoder emits
//! `b_max + 1` logits and the softmax is restricted to `{0, …, |S|}`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SetFunction;
use crate::error::{Error, Result};
use crate::math::{exp, floor, sqrt, tanh};

/// Affine layer `y = W x + b` with row-major `W` of shape `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights scaled by `gain`, zero bias.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let limit = gain * sqrt(6.0 / (inputs + outputs) as f64);
        let weights = (0..inputs * outputs)
            .map(|_| (2.0 * rng.random::<f64>() - 1.0) * limit)
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    pub(crate) fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// `out[o] = b[o] + W[o] · x` for the first `out.len()` outputs.
    pub(crate) fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = self.bias[o] + dot(self.row(o), x);
        }
    }

    fn is_well_formed(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs
            && self.bias.len() == self.outputs
            && self.weights.iter().chain(&self.bias).all(|w| w.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeepSetsModel {
    pub hidden_dim: usize,
    pub b_max: usize,
    /// `1 → h → h`.
    pub enc: [Dense; 2],
    /// `h → h → b_max + 1`.
    pub dec: [Dense; 2],
}

impl DeepSetsModel {
    pub fn zeros(hidden_dim: usize, b_max: usize) -> Self {
        Self {
            hidden_dim,
            b_max,
            enc: [
                Dense::zeros(1, hidden_dim),
                Dense::zeros(hidden_dim, hidden_dim),
            ],
            dec: [
                Dense::zeros(hidden_dim, hidden_dim),
                Dense::zeros(hidden_dim, b_max + 1),
            ],
        }
    }

    /// Seeded random initialization.
    ///
    /// The decoder input is a sum of up to `b_max` encodings, so its first
    /// layer starts scaled down by `sqrt(b_max)`.
    pub fn init(hidden_dim: usize, b_max: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = hidden_dim;
        let pooled_gain = 1.0 / sqrt(b_max.max(1) as f64);
        Self {
            hidden_dim,
            b_max,
            enc: [
                Dense::glorot(1, h, 1.0, &mut rng),
                Dense::glorot(h, h, 1.0, &mut rng),
            ],
            dec: [
                Dense::glorot(h, h, pooled_gain, &mut rng),
                Dense::glorot(h, b_max + 1, 1.0, &mut rng),
            ],
        }
    }

    /// Checks layer shapes and weight finiteness.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        if h == 0 || self.b_max == 0 {
            return Err(Error::ModelShape("hidden_dim and b_max must be positive"));
        }
        let shapes = [(1, h), (h, h), (h, h), (h, self.b_max + 1)];
        for (layer, (i, o)) in self.layers().zip(shapes) {
            if layer.inputs != i || layer.outputs != o {
                return Err(Error::ModelShape(
                    "layer dimensions do not match hidden_dim/b_max",
                ));
            }
            if !layer.is_well_formed() {
                return Err(Error::ModelShape("weights missing or not finite"));
            }
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.enc.iter().chain(self.dec.iter())
    }

    /// Every parameter in a fixed order (layer by layer, weights then bias).
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// `enc(φ)`, accumulated into `acc`.
    pub(crate) fn encode_add(&self, phi: f64, scratch: &mut [f64], acc: &mut [f64]) {
        let [l1, l2] = &self.enc;
        for (o, s) in scratch.iter_mut().enumerate() {
            *s = tanh(l1.bias[o] + l1.weights[o] * phi);
        }
        for (o, a) in acc.iter_mut().enumerate() {
            *a += tanh(l2.bias[o] + dot(l2.row(o), scratch));
        }
    }

    /// Distribution over the FP count of a set with pooled encoding `pooled`.
    pub(crate) fn decode(&self, pooled: &[f64], set_size: usize) -> FpDistribution {
        let [l3, l4] = &self.dec;
        let hidden: Vec<f64> = (0..self.hidden_dim)
            .map(|o| tanh(l3.bias[o] + dot(l3.row(o), pooled)))
            .collect();
        let mut logits = vec![0.0; set_size + 1];
        l4.forward_into(&hidden, &mut logits);
        FpDistribution::from_masked_logits(&logits)
    }

    /// `Ψ(S)` for a set given by its element features.
    ///
    /// Elements are pooled in descending order, so the result does not depend
    /// on the order of `features`.
    pub fn forward(&self, features: &[f64]) -> Result<FpDistribution> {
        let size = features.len();
        if size > self.b_max {
            return Err(Error::SetTooLarge {
                size,
                b_max: self.b_max,
            });
        }
        let mut sorted = features.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut scratch = vec![0.0; self.hidden_dim];
        let mut pooled = vec![0.0; self.hidden_dim];
        for &phi in &sorted {
            self.encode_add(phi, &mut scratch, &mut pooled);
        }
        Ok(self.decode(&pooled, size))
    }

    /// `Ψ(S_j)` for every prefix of a chain given in rank order.
    ///
    /// Agrees exactly with [`forward`](Self::forward) on each prefix when the
    /// scores are non-increasing.
    pub fn chain_distributions(&self, ranked_scores: &[f64]) -> Result<Vec<FpDistribution>> {
        if ranked_scores.len() > self.b_max {
            return Err(Error::SetTooLarge {
                size: ranked_scores.len(),
                b_max: self.b_max,
            });
        }
        let mut scratch = vec![0.0; self.hidden_dim];
        let mut pooled = vec![0.0; self.hidden_dim];
        Ok(ranked_scores
            .iter()
            .enumerate()
            .map(|(j, &phi)| {
                self.encode_add(phi, &mut scratch, &mut pooled);
                self.decode(&pooled, j + 1)
            })
            .collect())
    }
}

/// `deepsets_forward` with an explicit set size check.
pub fn deepsets_forward(
    model: &DeepSetsModel,
    features: &[f64],
    set_size: usize,
) -> Result<FpDistribution> {
    if set_size != features.len() {
        return Err(Error::InvalidArgument(
            "set_size must equal the number of features",
        ));
    }
    model.forward(features)
}

/// Probabilities of `FP = 0, 1, …, |S|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FpDistribution {
    probs: Vec<f64>,
}

impl FpDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("probabilities must sum to 1"));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_masked_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
        let total: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= total;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest admissible FP count `|S|`.
    pub fn set_size(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Expected FP count `Σ η · Ψ_η`.
pub fn f_k(dist: &FpDistribution) -> f64 {
    dist.probs
        .iter()
        .enumerate()
        .map(|(eta, p)| eta as f64 * p)
        .sum()
}

/// Estimated `P(FP > k) = 1 - Σ_{η ≤ min(⌊k⌋, |S|)} Ψ_η`, clamped to `[0, 1]`.
pub fn f_k_delta(dist: &FpDistribution, k: f64) -> f64 {
    let upto = if k < 0.0 { return 1.0 } else { floor(k) };
    if upto >= dist.set_size() as f64 {
        return 0.0;
    }
    let cdf: f64 = dist.probs[..=upto as usize].iter().sum();
    (1.0 - cdf).clamp(0.0, 1.0)
}

/// How a [`FpDistribution`] is turned into a set score.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Readout {
    /// [`f_k`], for k-FP control.
    ExpectedFp,
    /// [`f_k_delta`] at the given `k`, for (k, delta)-FP control.
    ExceedanceProb { k: f64 },
}

impl Readout {
    pub fn apply(&self, dist: &FpDistribution) -> f64 {
        match *self {
            Readout::ExpectedFp => f_k(dist),
            Readout::ExceedanceProb { k } => f_k_delta(dist, k),
        }
    }
}

/// A trained DeepSets model used as a set function.
#[derive(Debug, Clone, Copy)]
pub struct DeepSetsScore<'a> {
    pub model: &'a DeepSetsModel,
    pub readout: Readout,
}

impl SetFunction for DeepSetsScore<'_> {
    fn chain_scores(&self, ranked_scores: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .model
            .chain_distributions(ranked_scores)?
            .iter()
            .map(|d| self.readout.apply(d))
            .collect())
    }
}
