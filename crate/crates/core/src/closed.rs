//! Closed-setting watermark: rank-matched probability shift.
//!
//! Tokens of opposite color are paired by rank (largest `+1` token with the
//! largest `-1` token, and so on). Both members of a pair get the shift
//! `eps = min(p(a), p(b))`, and the watermarked law is
//! `q(i) = p(i) + eps(i) * r * Delta(i)`.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::keystream::{check_balanced, derive_closed_step, ClosedStepKey, Scheme, WatermarkKey};
use crate::prob::{sample_categorical, ProbVector, TokenId};
use crate::scalar::{min_of, Scalar};

/// Rank-matched pairing of the two color classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRanking<T = f64> {
    /// Tokens colored `+1` by non-increasing probability.
    pub ranked_pos: Vec<usize>,
    /// Tokens colored `-1` by non-increasing probability.
    pub ranked_neg: Vec<usize>,
    /// Per-token shift; paired tokens share a value.
    pub epsilons: Vec<T>,
}

impl<T: Scalar> PairedRanking<T> {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ranked_pos.iter().copied().zip(self.ranked_neg.iter().copied())
    }

    /// `sum_i eps(i)`, which is twice the sum of pair minima.
    pub fn total_shift(&self) -> T {
        self.epsilons.iter().cloned().fold(T::zero(), |a, b| a + b)
    }
}

/// Descending by probability; ties broken by ascending token index.
fn rank_desc<T: Scalar>(p: &[T], tokens: &mut [usize]) {
    tokens.sort_by(|&a, &b| {
        p[b].partial_cmp(&p[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
}

pub fn rank_match<T: Scalar>(p: &ProbVector<T>, coloring: &[i8]) -> Result<PairedRanking<T>> {
    if coloring.len() != p.d() {
        return Err(Error::DimensionMismatch { expected: p.d(), found: coloring.len() });
    }
    check_balanced(coloring)?;
    let probs = p.as_slice();
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..p.d()).partition(|&i| coloring[i] == 1);
    rank_desc(probs, &mut pos);
    rank_desc(probs, &mut neg);
    let mut epsilons = vec![T::zero(); p.d()];
    for (&a, &b) in pos.iter().zip(&neg) {
        let e = min_of(&probs[a], &probs[b]);
        epsilons[a] = e.clone();
        epsilons[b] = e;
    }
    Ok(PairedRanking { ranked_pos: pos, ranked_neg: neg, epsilons })
}

/// `q(i) = p(i) + eps(i) * r * Delta(i)` for an explicit coloring and flip.
pub fn shifted_distribution<T: Scalar>(
    p: &ProbVector<T>,
    coloring: &[i8],
    flip: i8,
) -> Result<ProbVector<T>> {
    let ranking = rank_match(p, coloring)?;
    let q = p
        .as_slice()
        .iter()
        .zip(&ranking.epsilons)
        .zip(coloring)
        .map(|((pi, e), &c)| {
            if flip * c == 1 {
                pi.clone() + e.clone()
            } else {
                pi.clone() - e.clone()
            }
        })
        .collect();
    ProbVector::new(q)
}

pub fn watermark_distribution<T: Scalar>(
    p: &ProbVector<T>,
    step_key: &ClosedStepKey,
) -> Result<ProbVector<T>> {
    shifted_distribution(p, step_key.coloring(), step_key.flip())
}

/// Pads `p` with the key's spurious token when needed.
pub(crate) fn align_to_key<T: Scalar>(p: &ProbVector<T>, key: &WatermarkKey) -> Result<ProbVector<T>> {
    if p.d() == key.d() {
        Ok(p.clone())
    } else if key.padded() && p.d() == key.vocab_size() {
        p.padded_to(key.d())
    } else {
        Err(Error::DimensionMismatch { expected: key.vocab_size(), found: p.d() })
    }
}

/// One watermarked sampling step.
pub fn closed_step<T: Scalar, R: Rng + ?Sized>(
    p: &ProbVector<T>,
    key: &WatermarkKey,
    step: u64,
    rng: &mut R,
) -> Result<TokenId> {
    if key.scheme() != Scheme::Closed {
        return Err(Error::SchemeMismatch { expected: Scheme::Closed, found: key.scheme() });
    }
    let p = align_to_key(p, key)?;
    let step_key = derive_closed_step(key, step)?;
    let q = watermark_distribution(&p, &step_key)?;
    Ok(sample_categorical(&q, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::stream_from_seed;
    use crate::scalar::ratio;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn p4() -> ProbVector {
        ProbVector::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15)
    }

    #[test]
    fn rank_match_example() {
        let r = rank_match(&p4(), &[1, -1, 1, -1]).unwrap();
        assert_eq!(r.pairs().collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
        assert!(close(&r.epsilons, &[0.3, 0.3, 0.1, 0.1]));
    }

    #[test]
    fn point_mass_has_no_shift() {
        let p = ProbVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        for coloring in [[1, -1, 1, -1], [1, 1, -1, -1], [-1, 1, 1, -1]] {
            let r = rank_match(&p, &coloring).unwrap();
            assert_eq!(r.epsilons, vec![0.0; 4]);
            assert_eq!(shifted_distribution(&p, &coloring, 1).unwrap(), p);
        }
    }

    #[test]
    fn uniform_shift_is_one_over_d() {
        let p = ProbVector::<f64>::uniform(8).unwrap();
        let r = rank_match(&p, &[1, 1, -1, 1, -1, -1, 1, -1]).unwrap();
        assert!(r.epsilons.iter().all(|&e| (e - 0.125).abs() < 1e-16));
    }

    #[test]
    fn ties_break_by_index() {
        let p = ProbVector::<f64>::uniform(4).unwrap();
        let r = rank_match(&p, &[-1, 1, -1, 1]).unwrap();
        assert_eq!(r.ranked_pos, vec![1, 3]);
        assert_eq!(r.ranked_neg, vec![0, 2]);
    }

    #[test]
    fn watermark_examples() {
        let plus = shifted_distribution(&p4(), &[1, -1, 1, -1], 1).unwrap();
        assert!(close(plus.as_slice(), &[0.7, 0.0, 0.3, 0.0]));
        let minus = shifted_distribution(&p4(), &[1, -1, 1, -1], -1).unwrap();
        assert!(close(minus.as_slice(), &[0.1, 0.6, 0.1, 0.2]));
    }

    #[test]
    fn exact_watermark_example() {
        let p: ProbVector<BigRational> =
            ProbVector::new(vec![ratio(2, 5), ratio(3, 10), ratio(1, 5), ratio(1, 10)]).unwrap();
        let q = shifted_distribution(&p, &[1, -1, 1, -1], 1).unwrap();
        assert_eq!(q.as_slice(), &[ratio(7, 10), ratio(0, 1), ratio(3, 10), ratio(0, 1)]);
    }

    #[test]
    fn unbalanced_coloring_rejected() {
        assert!(matches!(rank_match(&p4(), &[1, 1, 1, -1]), Err(Error::InvalidKey(_))));
        assert!(matches!(rank_match(&p4(), &[1, -1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn closed_step_on_point_mass() {
        let key = WatermarkKey::closed([7u8; 32], 4).unwrap();
        let p = ProbVector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = stream_from_seed(0);
        for step in 0..500 {
            assert_eq!(closed_step(&p, &key, step, &mut rng).unwrap(), TokenId(0));
        }
    }

    #[test]
    fn closed_step_pads_odd_dictionary() {
        let key = WatermarkKey::closed([7u8; 32], 3).unwrap();
        let p = ProbVector::new(vec![0.5, 0.25, 0.25]).unwrap();
        let mut rng = stream_from_seed(0);
        for step in 0..2000 {
            assert!(closed_step(&p, &key, step, &mut rng).unwrap().0 < 3);
        }
        let wrong = ProbVector::new(vec![0.5, 0.5]).unwrap();
        assert!(closed_step(&wrong, &key, 0, &mut rng).is_err());
    }

    #[test]
    fn closed_step_frequencies_for_fixed_step() {
        // Search for a step whose key is Delta = (+,-,+,-), r = +1.
        let key = WatermarkKey::closed([11u8; 32], 4).unwrap();
        let step = (0..)
            .find(|&s| {
                let k = derive_closed_step(&key, s).unwrap();
                k.coloring() == [1, -1, 1, -1] && k.flip() == 1
            })
            .unwrap();
        let mut rng = stream_from_seed(5);
        let draws = 1_000_000;
        let mut counts = [0u32; 4];
        for _ in 0..draws {
            counts[closed_step(&p4(), &key, step, &mut rng).unwrap().0] += 1;
        }
        for (c, e) in counts.iter().zip([0.7, 0.0, 0.3, 0.0]) {
            assert!((*c as f64 / draws as f64 - e).abs() < 0.005);
        }
    }

    #[test]
    fn closed_step_marginal_matches_p() {
        let key = WatermarkKey::closed([12u8; 32], 4).unwrap();
        let mut rng = stream_from_seed(6);
        let steps = 100_000u64;
        let mut counts = [0u32; 4];
        for s in 0..steps {
            counts[closed_step(&p4(), &key, s, &mut rng).unwrap().0] += 1;
        }
        for (c, e) in counts.iter().zip([0.4, 0.3, 0.2, 0.1]) {
            assert!((*c as f64 / steps as f64 - e).abs() < 0.01);
        }
    }

    fn random_case() -> impl Strategy<Value = (Vec<f64>, Vec<i8>, i8)> {
        (1usize..=32).prop_flat_map(|half| {
            let d = 2 * half;
            (
                prop::collection::vec(0.0f64..1.0, d),
                Just((0..d).map(|i| if i < half { 1i8 } else { -1 }).collect::<Vec<_>>())
                    .prop_shuffle(),
                prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }),
            )
        })
    }

    fn normalize(w: &[f64]) -> Option<ProbVector> {
        let s: f64 = w.iter().sum();
        (s > 0.0).then(|| ProbVector::new(w.iter().map(|x| x / s).collect()).ok()).flatten()
    }

    proptest! {
        #[test]
        fn q_is_valid((w, coloring, flip) in random_case()) {
            if let Some(p) = normalize(&w) {
                let q = shifted_distribution(&p, &coloring, flip).unwrap();
                prop_assert!(q.as_slice().iter().all(|&x| x >= 0.0));
            }
        }

        #[test]
        fn negating_flip_equals_negating_coloring((w, coloring, flip) in random_case()) {
            if let Some(p) = normalize(&w) {
                let neg: Vec<i8> = coloring.iter().map(|c| -c).collect();
                let a = shifted_distribution(&p, &coloring, -flip).unwrap();
                let b = shifted_distribution(&p, &neg, flip).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn ranking_invariants((w, coloring, _f) in random_case()) {
            if let Some(p) = normalize(&w) {
                let r = rank_match(&p, &coloring).unwrap();
                let probs = p.as_slice();
                let mut all: Vec<usize> = r.ranked_pos.iter().chain(&r.ranked_neg).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..p.d()).collect::<Vec<_>>());
                prop_assert!(r.ranked_pos.windows(2).all(|x| probs[x[0]] >= probs[x[1]]));
                prop_assert!(r.ranked_neg.windows(2).all(|x| probs[x[0]] >= probs[x[1]]));
                for (a, b) in r.pairs() {
                    prop_assert_eq!(r.epsilons[a], r.epsilons[b]);
                    prop_assert!(r.epsilons[a] <= probs[a] && r.epsilons[a] <= probs[b]);
                    prop_assert!(r.epsilons[a] >= 0.0);
                }
            }
        }
    }
}
