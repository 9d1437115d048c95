//! Seeded three-way splits: base-model training, set-function training, and
//! calibration plus test.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sizes for splitting `n` items: the first two fractions are rounded and the
/// last split takes the remainder.
pub fn split_sizes(n: usize, fracs: [f64; 3]) -> Result<[usize; 3]> {
    if fracs.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::Invalid(
            "split fractions must be finite and non-negative".into(),
        ));
    }
    if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid("split fractions must sum to 1".into()));
    }
    let a = ((fracs[0] * n as f64).round() as usize).min(n);
    let b = ((fracs[1] * n as f64).round() as usize).min(n - a);
    Ok([a, b, n - a - b])
}

/// Shuffles `data` with `seed` and cuts it into three disjoint parts that
/// together hold every item.
pub fn split_threeway<T>(mut data: Vec<T>, fracs: [f64; 3], seed: u64) -> Result<[Vec<T>; 3]> {
    let [a, b, _] = split_sizes(data.len(), fracs)?;
    data.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rest = data.split_off(a);
    let mut second = rest;
    let third = second.split_off(b);
    Ok([data, second, third])
}
