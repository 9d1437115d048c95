use fpcp_core::baselines::fit_top_k_from_prefix_fps;
use fpcp_core::Tolerance;
use proptest::prelude::*;

/// Non-decreasing prefix FP sequences of length `0..=b`, as produced by
/// nested chains.
fn prefix_fps(b: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(any::<bool>(), 0..=b).prop_map(|neg| {
        neg.iter()
            .scan(0, |fp, &is_neg| {
                *fp += usize::from(is_neg);
                Some(*fp)
            })
            .collect()
    })
}

fn fp_at(seq: &[usize], m: usize) -> usize {
    if m == 0 || seq.is_empty() {
        0
    } else {
        seq[m.min(seq.len()) - 1]
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn top_k_is_the_largest_size_meeting_the_mean(
        b in 1usize..=12,
        seqs in proptest::collection::vec(prefix_fps(12), 1..20),
        k in 0.05f64..8.0,
    ) {
        let seqs: Vec<Vec<usize>> = seqs.into_iter().map(|mut s| { s.truncate(b); s }).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let k_prime = fit_top_k_from_prefix_fps(&refs, b, Tolerance::k_fp(k).unwrap()).unwrap().k_prime;
        let mean = |m: usize| refs.iter().map(|s| fp_at(s, m)).sum::<usize>() as f64 / refs.len() as f64;
        prop_assert!(mean(k_prime) <= k);
        if k_prime < b {
            prop_assert!(k < mean(k_prime + 1));
        }
    }

    #[test]
    fn top_k_delta_is_the_largest_size_meeting_the_quantile(
        b in 1usize..=12,
        seqs in proptest::collection::vec(prefix_fps(12), 1..20),
        k in 0.05f64..6.0,
        delta in 0.01f64..0.99,
    ) {
        let seqs: Vec<Vec<usize>> = seqs.into_iter().map(|mut s| { s.truncate(b); s }).collect();
        let refs: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
        let tol = Tolerance::k_delta_fp(k, delta).unwrap();
        let k_prime = fit_top_k_from_prefix_fps(&refs, b, tol).unwrap().k_prime;
        let within = |m: usize| {
            refs.iter().filter(|s| fp_at(s, m) as f64 <= k).count() as f64 / refs.len() as f64
        };
        prop_assert!(within(k_prime) >= 1.0 - delta);
        if k_prime < b {
            prop_assert!(within(k_prime + 1) < 1.0 - delta);
        }
    }
}
