use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::Rng;

use tokenmark::detector::{closed_threshold, open_threshold};
use tokenmark::keystream::{derive_closed_step, derive_open_step, gaussian_entry};
use tokenmark::prob::stream_from_seed;
use tokenmark::sparsemean::{power_curve, Hypothesis, PowerGrid, SignMode, SparseTest};
use tokenmark::stats::{ks_test, normal_cdf};
use tokenmark::{
    detect, rank_match, shifted_distribution, softmax, ExactProbVector, Logits64, SupportMode, TokenSequence,
    WatermarkKey,
};

fn rational_prob(weights: &[u32]) -> Option<ExactProbVector> {
    let total: u64 = weights.iter().map(|&w| u64::from(w)).sum();
    (total > 0).then(|| {
        let probs = weights.iter().map(|&w| BigRational::new(BigInt::from(w), BigInt::from(total))).collect();
        ExactProbVector::new(probs).unwrap()
    })
}

proptest! {
    #[test]
    fn closed_colorings_are_balanced(seed in any::<[u8; 32]>(), d in 2usize..200, step in any::<u64>()) {
        let key = WatermarkKey::closed(seed, d).unwrap();
        let s = derive_closed_step(&key, step).unwrap();
        prop_assert_eq!(s.coloring().len(), key.d());
        prop_assert_eq!(s.coloring().iter().map(|&c| i32::from(c)).sum::<i32>(), 0);
        prop_assert!(s.flip() == 1 || s.flip() == -1);
        prop_assert_eq!(&derive_closed_step(&key, step).unwrap(), &s);
    }

    #[test]
    fn open_steps_have_unit_sparse_mean(
        seed in any::<[u8; 32]>(),
        d in 2usize..100,
        k_frac in 0.0f64..1.0,
        step in 0u64..1_000_000,
        fresh in any::<bool>(),
    ) {
        let k = 1 + (k_frac * (d - 1) as f64) as usize;
        let mode = if fresh { SupportMode::FreshPerStep } else { SupportMode::FixedPerKey };
        let key = WatermarkKey::open(seed, d, 0.5, k, mode).unwrap();
        let s = derive_open_step(&key, step).unwrap();
        prop_assert_eq!(s.support().len(), k);
        let norm: f64 = s.mean_vector().iter().map(|x| x * x).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        for (i, &m) in s.mean_vector().iter().enumerate() {
            prop_assert_eq!(m != 0.0, s.support().contains(&i));
        }
    }

    #[test]
    fn softmax_is_valid(l in prop::collection::vec(-50.0f64..50.0, 2..80)) {
        let p = softmax(&Logits64::new(l).unwrap()).unwrap();
        prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn exact_shift_sums_to_one(weights in prop::collection::vec(0u32..20, 1..10), seed in any::<u64>()) {
        let mut weights = weights;
        if weights.len() % 2 == 1 {
            weights.push(0);
        }
        if let Some(p) = rational_prob(&weights) {
            let d = p.d();
            let mut coloring: Vec<i8> = (0..d).map(|i| if i < d / 2 { 1 } else { -1 }).collect();
            rand::seq::SliceRandom::shuffle(coloring.as_mut_slice(), &mut stream_from_seed(seed));
            for flip in [1, -1] {
                let q = shifted_distribution(&p, &coloring, flip).unwrap();
                let sum = q.as_slice().iter().fold(BigRational::zero(), |a, b| a + b);
                prop_assert!(sum.is_one());
                prop_assert!(q.as_slice().iter().all(|x| *x >= BigRational::zero()));
            }
            let r = rank_match(&p, &coloring).unwrap();
            let bias: BigRational = {
                let plus = shifted_distribution(&p, &coloring, 1).unwrap();
                let minus = shifted_distribution(&p, &coloring, -1).unwrap();
                let signed = |q: &ExactProbVector| q.as_slice().iter().zip(&coloring).fold(BigRational::zero(), |a, (x, &c)| {
                    if c > 0 { a + x } else { a - x }
                });
                (signed(&plus) - signed(&minus)) / BigRational::from_integer(BigInt::from(2))
            };
            prop_assert_eq!(bias, r.total_shift());
        }
    }

    #[test]
    fn verdict_matches_threshold(seed in any::<[u8; 32]>(), tokens in prop::collection::vec(0usize..16, 1..300), delta in 0.001f64..0.5, open in any::<bool>()) {
        let key = if open {
            WatermarkKey::open(seed, 16, 0.5, 4, SupportMode::FixedPerKey).unwrap()
        } else {
            WatermarkKey::closed(seed, 16).unwrap()
        };
        let text = TokenSequence::from_indices(&tokens, 16).unwrap();
        let r = detect(&text, &key, delta).unwrap();
        prop_assert_eq!(r.verdict, r.statistic >= r.threshold);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        if r.verdict {
            prop_assert!(r.p_value <= delta + 1e-12);
        }
    }

    #[test]
    fn thresholds_shrink_with_n(n in 1usize..100_000, delta in 0.001f64..0.5) {
        prop_assert!(closed_threshold(n + 1, delta) < closed_threshold(n, delta));
        prop_assert!(closed_threshold(n, delta / 2.0) > closed_threshold(n, delta));
        prop_assert!(open_threshold(n + 1, delta, 0.5) < open_threshold(n, delta, 0.5));
    }
}

#[test]
fn key_gaussians_are_normal_per_coordinate() {
    let key = WatermarkKey::open([9; 32], 8, 0.5, 2, SupportMode::FixedPerKey).unwrap();
    for token in [0, 5] {
        let xs: Vec<f64> = (0..100_000).map(|s| gaussian_entry(&key, s, token).unwrap() / 0.5).collect();
        let (_, p) = ks_test(&xs, normal_cdf);
        assert!(p > 1e-3, "token {token}: KS p = {p}");
    }
}

#[test]
fn key_gaussians_are_uncorrelated_across_steps() {
    let key = WatermarkKey::open([3; 32], 4, 1.0, 1, SupportMode::FixedPerKey).unwrap();
    let samples = 50_000u64;
    for lag in [1u64, 7] {
        let corr: f64 = (0..samples)
            .map(|s| gaussian_entry(&key, s, 2).unwrap() * gaussian_entry(&key, s + lag, 2).unwrap())
            .sum::<f64>()
            / samples as f64;
        assert!(corr.abs() < 5.0 / (samples as f64).sqrt(), "lag {lag}: {corr}");
    }
}

#[test]
fn null_open_scores_are_gaussian() {
    // A token chosen independently of the key scores N(0, eps^2).
    let key = WatermarkKey::open([5; 32], 32, 0.5, 5, SupportMode::FixedPerKey).unwrap();
    let mut rng = stream_from_seed(77);
    let xs: Vec<f64> = (0..100_000)
        .map(|s| gaussian_entry(&key, s, rng.random_range(0..32)).unwrap() / 0.5)
        .collect();
    let (_, p) = ks_test(&xs, normal_cdf);
    assert!(p > 1e-3, "KS p = {p}");
}

#[test]
fn sparse_power_is_monotone() {
    let grid = PowerGrid {
        tests: vec![SparseTest::Threshold, SparseTest::Scan],
        ns: vec![5, 20, 80],
        d: 8,
        k: 2,
        epsilon: 1.0,
        trials: 150,
        alpha: 0.05,
        null_draws: 400,
        hypothesis: Hypothesis::Ha,
        signs: SignMode::Rademacher,
    };
    let rows = power_curve(&grid, 21).unwrap();
    for test in [SparseTest::Threshold, SparseTest::Scan] {
        let curve: Vec<_> = rows.iter().filter(|r| r.test == test).collect();
        for w in curve.windows(2) {
            assert!(w[1].ci_hi >= w[0].ci_lo && w[1].power + 1e-12 >= w[0].ci_lo, "{test} not monotone in n");
        }
    }
    let weaker = power_curve(&PowerGrid { epsilon: 0.5, ..grid.clone() }, 21).unwrap();
    for (a, b) in weaker.iter().zip(&rows) {
        assert!(a.power <= b.ci_hi, "{} n={} not monotone in epsilon", a.test, a.n);
    }
}
