#![allow(dead_code)]

use fpcp_core::{CalibrationSet, LabelSet, NestedCandidates};
use proptest::prelude::*;

/// A chain of `len` labels `0..len` with scores on a 0.01 grid and a random
/// positive set drawn from `0..len + 2`.
pub fn chain(max_b: usize) -> impl Strategy<Value = (NestedCandidates, LabelSet)> {
    (1..=max_b).prop_flat_map(move |b| {
        (
            Just(b),
            0..=b,
            proptest::collection::vec(0u32..=100, b),
            proptest::collection::vec(any::<bool>(), b + 2),
        )
            .prop_map(|(b, len, grid, pos)| {
                let scores: Vec<f64> = grid[..len].iter().map(|&g| f64::from(g) / 100.0).collect();
                let order: Vec<usize> = (0..len).collect();
                let positives: LabelSet = pos
                    .iter()
                    .enumerate()
                    .filter_map(|(c, &p)| p.then_some(c))
                    .collect();
                (
                    NestedCandidates::from_parts("p", order, scores, b).unwrap(),
                    positives,
                )
            })
    })
}

/// Calibration sets with `n <= max_n` chains sharing one `B <= max_b`.
pub fn calibration_set(max_n: usize, max_b: usize) -> impl Strategy<Value = CalibrationSet> {
    (1..=max_b, 1..=max_n).prop_flat_map(|(b, n)| {
        proptest::collection::vec(
            (
                0..=b,
                proptest::collection::vec(0u32..=100, b),
                proptest::collection::vec(any::<bool>(), b),
            ),
            n,
        )
        .prop_map(move |items| {
            let items = items
                .into_iter()
                .map(|(len, grid, pos)| {
                    let scores: Vec<f64> =
                        grid[..len].iter().map(|&g| f64::from(g) / 100.0).collect();
                    let positives: LabelSet = pos
                        .iter()
                        .enumerate()
                        .filter_map(|(c, &p)| p.then_some(c))
                        .collect();
                    (
                        NestedCandidates::from_parts("c", (0..len).collect(), scores, b).unwrap(),
                        positives,
                    )
                })
                .collect();
            CalibrationSet::new(items).unwrap()
        })
    })
}
