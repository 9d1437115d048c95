//! Two-parameter Platt scaling on logit-transformed scores.

use crate::error::{Error, Result};
use crate::math::{clamped_logit, sigmoid, softplus, sqrt};

const MAX_NEWTON_ITERS: usize = 500;
const GRAD_TOL: f64 = 1e-8;

/// Recalibration `p ↦ sigmoid(a · logit(p) + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    pub const IDENTITY: PlattParams = PlattParams { a: 1.0, b: 0.0 };

    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * clamped_logit(p) + self.b)
    }
}

/// Mean logistic loss of `sigmoid(a·x + b)` over `(x, y)` pairs.
fn loss(data: &[(f64, bool)], a: f64, b: f64) -> f64 {
    let total: f64 = data
        .iter()
        .map(|&(x, y)| {
            let z = a * x + b;
            if y {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum();
    total / data.len() as f64
}

/// Fits Platt scaling by Newton's method with backtracking.
///
/// Stops once the gradient norm of the mean logistic loss drops to `1e-8`
/// or after 500 iterations. Both classes must be present.
pub fn fit_platt(labels_and_scores: &[(f64, bool)]) -> Result<PlattParams> {
    let positives = labels_and_scores.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labels_and_scores.len() {
        return Err(Error::PlattDegenerate);
    }
    if labels_and_scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::InvalidArgument("Platt scores must be finite"));
    }
    let data: alloc::vec::Vec<(f64, bool)> = labels_and_scores
        .iter()
        .map(|&(s, y)| (clamped_logit(s), y))
        .collect();
    let n = data.len() as f64;

    let (mut a, mut b) = (1.0, 0.0);
    let mut current = loss(&data, a, b);
    for _ in 0..MAX_NEWTON_ITERS {
        let (mut ga, mut gb) = (0.0, 0.0);
        let (mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0);
        for &(x, y) in &data {
            let p = sigmoid(a * x + b);
            let r = p - if y { 1.0 } else { 0.0 };
            ga += r * x;
            gb += r;
            let w = p * (1.0 - p);
            haa += w * x * x;
            hab += w * x;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        if sqrt(ga * ga + gb * gb) <= GRAD_TOL {
            break;
        }
        // tiny ridge keeps the solve defined on separable data
        let ridge = 1e-12;
        let (haa, hab, hbb) = (haa / n + ridge, hab / n, hbb / n + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };

        let mut step = 1.0;
        let slope = ga * da + gb * db;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let candidate = loss(&data, na, nb);
            if candidate <= current + 1e-4 * step * slope {
                a = na;
                b = nb;
                current = candidate;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                return Ok(PlattParams { a, b });
            }
        }
    }
    Ok(PlattParams { a, b })
}
