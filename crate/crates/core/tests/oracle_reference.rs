use fpcp_core::oracle::{expected_fp, expected_tpp, oracle_predict, prob_fp_exceeds};
use fpcp_core::Tolerance;
use proptest::prelude::*;

/// Enumerates every label outcome `Z` with its probability.
fn outcomes(p: &[f64]) -> Vec<(u32, f64)> {
    (0..1u32 << p.len())
        .map(|z| {
            let prob = p
                .iter()
                .enumerate()
                .map(|(c, &q)| if z >> c & 1 == 1 { q } else { 1.0 - q })
                .product();
            (z, prob)
        })
        .collect()
}

struct Moments {
    tpp: f64,
    fp: f64,
    exceed: f64,
}

fn naive_moments(p: &[f64], set: u32, k: f64) -> Moments {
    let mut m = Moments {
        tpp: 0.0,
        fp: 0.0,
        exceed: 0.0,
    };
    for (z, prob) in outcomes(p) {
        let tp = (set & z).count_ones() as f64;
        let fp = (set & !z).count_ones() as f64;
        m.tpp += prob * tp / f64::from(z.count_ones().max(1));
        m.fp += prob * fp;
        if fp > k {
            m.exceed += prob;
        }
    }
    m
}

fn members(mask: u32, n: usize) -> Vec<usize> {
    (0..n).filter(|c| mask >> c & 1 == 1).collect()
}

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            Just(0.0),
            Just(1.0),
            (0u32..=20).prop_map(|i| f64::from(i) / 20.0),
            0.0f64..1.0
        ],
        1..=7,
    )
}

fn tolerance() -> impl Strategy<Value = Tolerance> {
    prop_oneof![
        (0.05f64..4.0).prop_map(|k| Tolerance::k_fp(k).unwrap()),
        (0.5f64..3.0, 0.05f64..0.6).prop_map(|(k, d)| Tolerance::k_delta_fp(k, d).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn closed_forms_match_outcome_enumeration(p in probs(), mask in any::<u32>(), k in 0.0f64..5.0) {
        let n = p.len();
        let set = members(mask & ((1 << n) - 1), n);
        let m = naive_moments(&p, mask & ((1 << n) - 1), k);
        prop_assert!((expected_tpp(&p, &set) - m.tpp).abs() < 1e-12);
        prop_assert!((expected_fp(&p, &set) - m.fp).abs() < 1e-12);
        prop_assert!((prob_fp_exceeds(&p, &set, k) - m.exceed).abs() < 1e-12);
    }

    #[test]
    fn oracle_is_an_admissible_maximizer(p in probs(), tol in tolerance()) {
        let n = p.len();
        let chosen = oracle_predict(&p, tol).unwrap();
        let chosen_mask: u32 = chosen.iter().map(|&c| 1u32 << c).sum();
        let k = tol.k();
        let admissible = |m: &Moments| match tol {
            Tolerance::KFp { k } => m.fp <= k,
            Tolerance::KDeltaFp { delta, .. } => m.exceed < delta,
        };
        let best = naive_moments(&p, chosen_mask, k);
        prop_assert!(admissible(&best) || chosen.is_empty());
        for mask in 0..1u32 << n {
            let m = naive_moments(&p, mask, k);
            if admissible(&m) {
                prop_assert!(m.tpp <= best.tpp + 1e-9);
                // equally good sets are never smaller than the chosen one
                if (m.tpp - best.tpp).abs() <= 1e-13 {
                    prop_assert!(mask.count_ones() as usize >= chosen.len());
                }
            }
        }
    }
}

#[test]
fn worked_examples() {
    assert_eq!(
        oracle_predict(&[1.0, 0.0], Tolerance::k_fp(0.5).unwrap()).unwrap(),
        vec![0]
    );
    assert_eq!(
        oracle_predict(&[0.9, 0.9, 0.1], Tolerance::k_fp(0.25).unwrap()).unwrap(),
        vec![0, 1]
    );
    assert!(oracle_predict(&[0.0; 5], Tolerance::k_fp(3.0).unwrap())
        .unwrap()
        .is_empty());
}
