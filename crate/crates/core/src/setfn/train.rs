//! Cross-entropy training of [`DeepSetsModel`] on sampled labelled sets.
//!
//! Sets are grouped per source example so every element is encoded once even
//! when it belongs to several sampled sets.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::deepsets::{dot, DeepSetsModel, FpDistribution};
use crate::error::{Error, Result};
use crate::math::{ln, sqrt, tanh};
use crate::types::{rank_labels, ScoredExample};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Source examples per gradient step.
    pub batch: usize,
    pub seed: u64,
    pub b_max: usize,
    /// Random-length ranked prefixes sampled per example.
    pub sets_per_example: usize,
    /// Uniformly random subsets sampled per example.
    pub random_subsets: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            epochs: 20,
            lr: 1e-3,
            batch: 32,
            seed: 0,
            b_max: 100,
            sets_per_example: 8,
            random_subsets: 2,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.b_max == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument(
                "hidden_dim, b_max and batch must be positive",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One labelled set: indices into the group's elements and its true FP count.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub members: Vec<u32>,
    pub fp_count: usize,
}

/// Sets drawn from one example, sharing the element features `elements`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingGroup {
    pub elements: Vec<f64>,
    pub sets: Vec<TrainingSet>,
}

/// Samples ranked prefixes of uniform random length in `[0, min(b_max, |Y|)]`
/// plus uniformly random subsets of the same size range.
pub fn sample_group<R: Rng>(ex: &ScoredExample, cfg: &TrainConfig, rng: &mut R) -> TrainingGroup {
    let n = ex.n_labels();
    let cap = cfg.b_max.min(n);
    let lengths: Vec<usize> = (0..cfg.sets_per_example)
        .map(|_| rng.random_range(0..=cap))
        .collect();
    let longest = lengths.iter().copied().max().unwrap_or(0);

    let ranked = rank_labels(&ex.scores);
    let mut labels: Vec<usize> = ranked[..longest].to_vec();
    let mut sets: Vec<TrainingSet> = lengths
        .iter()
        .map(|&len| TrainingSet {
            members: (0..len as u32).collect(),
            fp_count: 0,
        })
        .collect();

    for _ in 0..cfg.random_subsets {
        let size = rng.random_range(0..=cap);
        let start = labels.len() as u32;
        labels.extend(index::sample(rng, n, size));
        sets.push(TrainingSet {
            members: (start..start + size as u32).collect(),
            fp_count: 0,
        });
    }

    for set in sets.iter_mut() {
        set.fp_count = set
            .members
            .iter()
            .filter(|&&m| !ex.positives.contains(labels[m as usize]))
            .count();
    }
    TrainingGroup {
        elements: labels.iter().map(|&c| ex.scores[c]).collect(),
        sets,
    }
}

struct Workspace {
    h1: Vec<f64>,
    enc: Vec<f64>,
    denc: Vec<f64>,
    pooled: Vec<f64>,
    h3: Vec<f64>,
    logits: Vec<f64>,
    da3: Vec<f64>,
    dh: Vec<f64>,
}

impl Workspace {
    fn new(model: &DeepSetsModel) -> Self {
        let h = model.hidden_dim;
        Self {
            h1: Vec::new(),
            enc: Vec::new(),
            denc: Vec::new(),
            pooled: vec![0.0; h],
            h3: vec![0.0; h],
            logits: vec![0.0; model.b_max + 1],
            da3: vec![0.0; h],
            dh: vec![0.0; h],
        }
    }
}

fn check_group(model: &DeepSetsModel, group: &TrainingGroup) -> Result<()> {
    for set in &group.sets {
        if set.members.len() > model.b_max {
            return Err(Error::SetTooLarge {
                size: set.members.len(),
                b_max: model.b_max,
            });
        }
        if set.fp_count > set.members.len()
            || set
                .members
                .iter()
                .any(|&m| m as usize >= group.elements.len())
        {
            return Err(Error::InvalidArgument("malformed training set"));
        }
    }
    Ok(())
}

/// Mean cross-entropy over all sets in `groups`, and its gradient (returned
/// in a model-shaped container).
pub fn loss_and_gradient(
    model: &DeepSetsModel,
    groups: &[TrainingGroup],
) -> Result<(f64, DeepSetsModel)> {
    let mut grad = DeepSetsModel::zeros(model.hidden_dim, model.b_max);
    let mut ws = Workspace::new(model);
    let mut total = 0.0;
    let mut count = 0usize;
    for group in groups {
        check_group(model, group)?;
        total += group_backward(model, group, &mut grad, &mut ws);
        count += group.sets.len();
    }
    if count == 0 {
        return Err(Error::EmptyTrainingData);
    }
    let scale = 1.0 / count as f64;
    for g in grad.params_mut() {
        *g *= scale;
    }
    Ok((total * scale, grad))
}

/// Mean cross-entropy over all sets in `groups`.
pub fn loss(model: &DeepSetsModel, groups: &[TrainingGroup]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for group in groups {
        check_group(model, group)?;
        for set in &group.sets {
            let features: Vec<f64> = set
                .members
                .iter()
                .map(|&m| group.elements[m as usize])
                .collect();
            let dist = model.forward(&features)?;
            total -= ln(dist.probs()[set.fp_count]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyTrainingData);
    }
    Ok(total / count as f64)
}

/// Accumulates the summed (unnormalized) gradient of one group into `grad`;
/// returns the summed loss.
fn group_backward(
    model: &DeepSetsModel,
    group: &TrainingGroup,
    grad: &mut DeepSetsModel,
    ws: &mut Workspace,
) -> f64 {
    let h = model.hidden_dim;
    let n_el = group.elements.len();
    let [l1, l2] = &model.enc;
    let [l3, l4] = &model.dec;

    ws.h1.clear();
    ws.h1.resize(n_el * h, 0.0);
    ws.enc.clear();
    ws.enc.resize(n_el * h, 0.0);
    ws.denc.clear();
    ws.denc.resize(n_el * h, 0.0);

    for (e, &phi) in group.elements.iter().enumerate() {
        let h1 = &mut ws.h1[e * h..(e + 1) * h];
        for (o, s) in h1.iter_mut().enumerate() {
            *s = tanh(l1.bias[o] + l1.weights[o] * phi);
        }
        let enc = &mut ws.enc[e * h..(e + 1) * h];
        for (o, s) in enc.iter_mut().enumerate() {
            *s = tanh(l2.bias[o] + dot(l2.row(o), h1));
        }
    }

    let mut total = 0.0;
    for set in &group.sets {
        let size = set.members.len();
        ws.pooled.iter_mut().for_each(|p| *p = 0.0);
        for &m in &set.members {
            let enc = &ws.enc[m as usize * h..(m as usize + 1) * h];
            for (p, x) in ws.pooled.iter_mut().zip(enc) {
                *p += x;
            }
        }
        for o in 0..h {
            ws.h3[o] = tanh(l3.bias[o] + dot(l3.row(o), &ws.pooled));
        }
        let logits = &mut ws.logits[..=size];
        l4.forward_into(&ws.h3, logits);
        let dist = FpDistribution::from_masked_logits(logits);
        total -= ln(dist.probs()[set.fp_count]);

        // d loss / d logits = p - onehot(y) on the admissible range
        ws.dh.iter_mut().for_each(|d| *d = 0.0);
        let [g3, g4] = &mut grad.dec;
        for (i, &p) in dist.probs().iter().enumerate() {
            let dl = p - if i == set.fp_count { 1.0 } else { 0.0 };
            g4.bias[i] += dl;
            let row = &mut g4.weights[i * h..(i + 1) * h];
            for (g, x) in row.iter_mut().zip(&ws.h3) {
                *g += dl * x;
            }
            for (d, w) in ws.dh.iter_mut().zip(l4.row(i)) {
                *d += dl * w;
            }
        }
        for o in 0..h {
            ws.da3[o] = ws.dh[o] * (1.0 - ws.h3[o] * ws.h3[o]);
        }
        ws.dh.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..h {
            let da = ws.da3[o];
            g3.bias[o] += da;
            let row = &mut g3.weights[o * h..(o + 1) * h];
            for (g, x) in row.iter_mut().zip(&ws.pooled) {
                *g += da * x;
            }
            for (d, w) in ws.dh.iter_mut().zip(l3.row(o)) {
                *d += da * w;
            }
        }
        for &m in &set.members {
            let denc = &mut ws.denc[m as usize * h..(m as usize + 1) * h];
            for (d, x) in denc.iter_mut().zip(&ws.dh) {
                *d += x;
            }
        }
    }

    let [g1, g2] = &mut grad.enc;
    let mut da2 = vec![0.0; h];
    let mut dh1 = vec![0.0; h];
    for (e, &phi) in group.elements.iter().enumerate() {
        let denc = &ws.denc[e * h..(e + 1) * h];
        if denc.iter().all(|&d| d == 0.0) {
            continue;
        }
        let enc = &ws.enc[e * h..(e + 1) * h];
        let h1 = &ws.h1[e * h..(e + 1) * h];
        dh1.iter_mut().for_each(|d| *d = 0.0);
        for o in 0..h {
            da2[o] = denc[o] * (1.0 - enc[o] * enc[o]);
            g2.bias[o] += da2[o];
            let row = &mut g2.weights[o * h..(o + 1) * h];
            for (g, x) in row.iter_mut().zip(h1) {
                *g += da2[o] * x;
            }
            for (d, w) in dh1.iter_mut().zip(l2.row(o)) {
                *d += da2[o] * w;
            }
        }
        for o in 0..h {
            let da1 = dh1[o] * (1.0 - h1[o] * h1[o]);
            g1.bias[o] += da1;
            g1.weights[o] += da1 * phi;
        }
    }
    total
}

/// Adam with the usual defaults (`β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, model: &mut DeepSetsModel, grad: &DeepSetsModel) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let c1 = 1.0 - libm::pow(B1, self.step as f64);
        let c2 = 1.0 - libm::pow(B2, self.step as f64);
        for (((w, g), m), v) in model
            .params_mut()
            .zip(grad.params())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = B1 * *m + (1.0 - B1) * g;
            *v = B2 * *v + (1.0 - B2) * g * g;
            *w -= self.lr * (*m / c1) / (sqrt(*v / c2) + EPS);
        }
    }
}

/// Samples one [`TrainingGroup`] per example with the config's sampling rule.
pub fn sample_groups(train: &[ScoredExample], cfg: &TrainConfig) -> Vec<TrainingGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    train
        .iter()
        .map(|ex| sample_group(ex, cfg, &mut rng))
        .collect()
}

/// Trains a model from the seeded initialization; deterministic given
/// `cfg.seed`. `on_epoch` receives `(epoch, mean training loss)`.
pub fn train_deepsets_logged(
    train: &[ScoredExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<DeepSetsModel> {
    cfg.check()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingData);
    }
    let mut model = DeepSetsModel::init(cfg.hidden_dim, cfg.b_max, cfg.seed);
    if cfg.epochs == 0 {
        return Ok(model);
    }
    let groups = sample_groups(train, cfg);
    let mut adam = Adam::new(model.n_params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut batch: Vec<TrainingGroup> = Vec::with_capacity(cfg.batch);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| groups[i].clone()));
            if batch.iter().all(|g| g.sets.is_empty()) {
                continue;
            }
            let (l, grad) = loss_and_gradient(&model, &batch)?;
            adam.update(&mut model, &grad);
            epoch_loss += l;
            steps += 1;
        }
        on_epoch(epoch, epoch_loss / steps.max(1) as f64);
    }
    Ok(model)
}

pub fn train_deepsets(train: &[ScoredExample], cfg: &TrainConfig) -> Result<DeepSetsModel> {
    train_deepsets_logged(train, cfg, |_, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelSet;

    fn toy(n: usize, seed: u64) -> Vec<ScoredExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut scores = Vec::new();
                let mut pos = Vec::new();
                for c in 0..10 {
                    if rng.random::<f64>() < 0.4 {
                        scores.push(0.99);
                        pos.push(c);
                    } else {
                        scores.push(0.01);
                    }
                }
                ScoredExample::new(alloc::format!("t{i}"), scores, LabelSet::from(pos))
            })
            .collect()
    }

    #[test]
    fn sampled_groups_are_labelled_by_counting() {
        let data = toy(20, 1);
        let cfg = TrainConfig {
            b_max: 10,
            ..TrainConfig::default()
        };
        for (ex, g) in data.iter().zip(sample_groups(&data, &cfg)) {
            assert_eq!(g.sets.len(), cfg.sets_per_example + cfg.random_subsets);
            for set in &g.sets {
                let negatives = set
                    .members
                    .iter()
                    .filter(|&&m| g.elements[m as usize] < 0.5)
                    .count();
                assert_eq!(set.fp_count, negatives);
                assert!(set.members.len() <= 10);
            }
            assert_eq!(ex.n_labels(), 10);
        }
    }

    #[test]
    fn gradient_loss_agrees_with_forward_loss() {
        let data = toy(5, 2);
        let cfg = TrainConfig {
            b_max: 10,
            hidden_dim: 6,
            ..TrainConfig::default()
        };
        let groups = sample_groups(&data, &cfg);
        let model = DeepSetsModel::init(6, 10, 4);
        let (l, _) = loss_and_gradient(&model, &groups).unwrap();
        let reference = loss(&model, &groups).unwrap();
        assert!((l - reference).abs() < 1e-10);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            hidden_dim: 4,
            b_max: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let m = train_deepsets(&toy(3, 0), &cfg).unwrap();
        assert_eq!(m, DeepSetsModel::init(4, 10, 5));
    }

    #[test]
    fn empty_training_data_is_an_error() {
        assert_eq!(
            train_deepsets(&[], &TrainConfig::default()),
            Err(Error::EmptyTrainingData)
        );
    }
}
