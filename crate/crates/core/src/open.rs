//! Open-setting watermark: logits perturbed by a sparse Gaussian mixture,
//! `Delta = G + r * eps * mu` with `G ~ N(0, eps^2 I)` and `mu = k^{-1/2} 1_S`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::keystream::{derive_open_step, OpenStepKey, Scheme, WatermarkKey};
use crate::prob::{sample_categorical, softmax_slice, Logits, ProbVector, TokenId};
use crate::scalar::Real;

pub const DEFAULT_EPSILON: f64 = 0.5;

/// Largest noise scale covered by the completeness and bias guarantees.
pub const GUARANTEED_EPSILON_MAX: f64 = 0.5;

/// `G + r * eps * mu`.
pub fn build_perturbation<T: Real>(step_key: &OpenStepKey, epsilon: T) -> Vec<T> {
    let shift = epsilon * T::from_f64_lossy(f64::from(step_key.direction()));
    step_key
        .gaussian()
        .iter()
        .zip(step_key.mean_vector())
        .map(|(&g, &m)| T::from_f64_lossy(g) + shift * T::from_f64_lossy(m))
        .collect()
}

/// `softmax(l + Delta)`.
pub fn watermarked_softmax<T: Real>(logits: &Logits<T>, perturbation: &[T]) -> Result<ProbVector<T>> {
    if perturbation.len() != logits.d() {
        return Err(Error::DimensionMismatch { expected: logits.d(), found: perturbation.len() });
    }
    let shifted: Vec<T> =
        logits.as_slice().iter().zip(perturbation).map(|(&l, &dl)| l + dl).collect();
    softmax_slice(&shifted)
}

/// Same law as [`watermarked_softmax`] with `l = ln p`, but without needing
/// finite logits: `q(i) ∝ p(i) e^{Delta(i)}`. Tokens with `p(i) = 0` stay at 0.
pub fn watermarked_from_probs<T: Real>(p: &ProbVector<T>, perturbation: &[T]) -> Result<ProbVector<T>> {
    if perturbation.len() != p.d() {
        return Err(Error::DimensionMismatch { expected: p.d(), found: perturbation.len() });
    }
    if perturbation.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("perturbation is not finite".into()));
    }
    let probs = p.as_slice();
    let max = probs
        .iter()
        .zip(perturbation)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(_, &dl)| dl)
        .fold(T::neg_infinity(), T::max);
    let mut q: Vec<T> = probs
        .iter()
        .zip(perturbation)
        .map(|(&pi, &dl)| if pi > T::zero() { pi * (dl - max).exp() } else { T::zero() })
        .collect();
    let sum = q.iter().copied().fold(T::zero(), |a, b| a + b);
    for v in &mut q {
        *v = *v / sum;
    }
    ProbVector::new(q)
}

fn step_perturbation<T: Real>(key: &WatermarkKey, step: u64, d: usize) -> Result<Vec<T>> {
    if key.scheme() != Scheme::Open {
        return Err(Error::SchemeMismatch { expected: Scheme::Open, found: key.scheme() });
    }
    if d != key.d() {
        return Err(Error::DimensionMismatch { expected: key.d(), found: d });
    }
    let step_key = derive_open_step(key, step)?;
    Ok(build_perturbation(&step_key, T::from_f64_lossy(key.epsilon())))
}

pub fn open_step<T: Real, R: Rng + ?Sized>(
    logits: &Logits<T>,
    key: &WatermarkKey,
    step: u64,
    rng: &mut R,
) -> Result<TokenId> {
    let delta = step_perturbation(key, step, logits.d())?;
    let q = watermarked_softmax(logits, &delta)?;
    Ok(sample_categorical(&q, rng))
}

/// [`open_step`] for sources that expose probabilities rather than logits.
pub fn open_step_from_probs<T: Real, R: Rng + ?Sized>(
    p: &ProbVector<T>,
    key: &WatermarkKey,
    step: u64,
    rng: &mut R,
) -> Result<TokenId> {
    let delta = step_perturbation(key, step, p.d())?;
    let q = watermarked_from_probs(p, &delta)?;
    Ok(sample_categorical(&q, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::{gaussian_entry, SupportMode};
    use crate::prob::{softmax, stream_from_seed};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut crate::prob::RandomStream) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn perturbation_with_zero_noise() {
        let key = OpenStepKey::new(vec![0.0; 4], vec![0, 2], 1).unwrap();
        let d = build_perturbation(&key, 0.5f64);
        let e = 0.5 / 2f64.sqrt();
        assert!((d[0] - e).abs() < 1e-15 && (d[2] - e).abs() < 1e-15);
        assert_eq!((d[1], d[3]), (0.0, 0.0));
        assert!((e - 0.35355).abs() < 1e-5);
        let neg = OpenStepKey::new(vec![0.0; 4], vec![0, 2], -1).unwrap();
        let dn = build_perturbation(&neg, 0.5f64);
        assert!(d.iter().zip(&dn).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn perturbation_mean_is_shift() {
        let mut rng = stream_from_seed(21);
        let eps = 0.5;
        let trials = 1_000_000;
        let mut sum = [0.0f64; 4];
        for _ in 0..trials {
            let g: Vec<f64> = (0..4).map(|_| eps * normal(&mut rng)).collect();
            let key = OpenStepKey::new(g, vec![0, 2], 1).unwrap();
            for (s, v) in sum.iter_mut().zip(build_perturbation(&key, eps)) {
                *s += v;
            }
        }
        let mu = [eps / 2f64.sqrt(), 0.0, eps / 2f64.sqrt(), 0.0];
        for (s, m) in sum.iter().zip(mu) {
            assert!((s / trials as f64 - m).abs() < 0.005);
        }
    }

    #[test]
    fn softmax_examples() {
        let l = Logits::new(vec![0.0f64, 0.0]).unwrap();
        let q = watermarked_softmax(&l, &[2f64.ln(), 0.0]).unwrap();
        assert!((q.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((q.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        let l = Logits::new(vec![0.3f64, -1.0, 2.0]).unwrap();
        let zero = watermarked_softmax(&l, &[0.0; 3]).unwrap();
        assert_eq!(zero, softmax(&l).unwrap());
        let shifted = watermarked_softmax(&l, &[4.0; 3]).unwrap();
        for (a, b) in shifted.as_slice().iter().zip(zero.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(watermarked_softmax(&l, &[0.0; 2]).is_err());
    }

    #[test]
    fn from_probs_matches_log_route() {
        let p = ProbVector::new(vec![0.5f64, 0.3, 0.2]).unwrap();
        let delta = [0.4, -1.2, 0.7];
        let logits = Logits::new(p.as_slice().iter().map(|x| x.ln()).collect()).unwrap();
        let a = watermarked_from_probs(&p, &delta).unwrap();
        let b = watermarked_softmax(&logits, &delta).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        let zero = ProbVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(watermarked_from_probs(&zero, &[30.0, -3.0]).unwrap().as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn vanishing_epsilon_keeps_softmax_law() {
        let key = WatermarkKey::open([3u8; 32], 3, 1e-9, 1, SupportMode::FixedPerKey).unwrap();
        let l = Logits::new(vec![1.0, 0.0, -1.0]).unwrap();
        let p = softmax(&l).unwrap();
        let mut rng = stream_from_seed(8);
        let n = 200_000;
        let mut counts = [0u32; 3];
        for s in 0..n {
            counts[open_step(&l, &key, s, &mut rng).unwrap().0] += 1;
        }
        for (c, e) in counts.iter().zip(p.as_slice()) {
            let se = (e * (1.0 - e) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - e).abs() < 4.0 * se);
        }
    }

    #[test]
    fn fixed_perturbation_frequencies() {
        let l = Logits::new(vec![0.0, 0.0]).unwrap();
        let q = watermarked_softmax(&l, &[2f64.ln(), 0.0]).unwrap();
        let mut rng = stream_from_seed(9);
        let n = 1_000_000;
        let zeros = (0..n).filter(|_| sample_categorical(&q, &mut rng).0 == 0).count();
        assert!((zeros as f64 / n as f64 - 2.0 / 3.0).abs() < 0.005);
    }

    #[test]
    fn watermarked_tokens_correlate_with_key() {
        let key = WatermarkKey::open([4u8; 32], 64, 1.0, 8, SupportMode::FixedPerKey).unwrap();
        let l = Logits::new(vec![0.0; 64]).unwrap();
        let mut rng = stream_from_seed(10);
        let steps = 1_000_000u64;
        let mut sum = 0.0;
        for s in 0..steps {
            let x = open_step(&l, &key, s, &mut rng).unwrap();
            sum += gaussian_entry(&key, s, x.0).unwrap();
        }
        assert!(sum / steps as f64 > 0.0);
    }

    #[test]
    fn scheme_and_dimension_errors() {
        let closed = WatermarkKey::closed([0u8; 32], 4).unwrap();
        let l = Logits::new(vec![0.0; 4]).unwrap();
        let mut rng = stream_from_seed(0);
        assert!(matches!(open_step(&l, &closed, 0, &mut rng), Err(Error::SchemeMismatch { .. })));
        let open = WatermarkKey::open([0u8; 32], 5, 0.5, 2, SupportMode::FixedPerKey).unwrap();
        assert!(matches!(open_step(&l, &open, 0, &mut rng), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn output_is_valid(
            l in prop::collection::vec(-30.0f64..30.0, 2..40),
            seed in any::<u64>(),
        ) {
            let mut rng = stream_from_seed(seed);
            let delta: Vec<f64> = (0..l.len()).map(|_| 3.0 * normal(&mut rng)).collect();
            let q = watermarked_softmax(&Logits::new(l).unwrap(), &delta).unwrap();
            prop_assert!(q.as_slice().iter().all(|&x| x >= 0.0));
        }
    }
}
