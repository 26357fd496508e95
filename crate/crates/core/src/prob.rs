//! Probability vectors, logits, softmax and categorical sampling over a
//! dictionary of `d` tokens.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// The only stateful object in the crate: a single-owner text/Monte-Carlo stream.
pub type RandomStream = ChaCha8Rng;

pub fn stream_from_seed(seed: u64) -> RandomStream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_from_bytes(seed: [u8; 32]) -> RandomStream {
    ChaCha8Rng::from_seed(seed)
}

/// 0-based index into the dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub usize);

impl TokenId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TokenId {
    // Human-readable output is 1-based.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0 + 1)
    }
}

/// Probability distribution over `[d]`, `d >= 2`.
///
/// Entries are non-negative and sum to one within [`Scalar::sum_tolerance`].
/// Vectors that fail the check are rejected rather than renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T = f64> {
    probs: Vec<T>,
}

impl<T: Scalar> ProbVector<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dictionary size must be at least 2, got {}",
                probs.len()
            )));
        }
        let mut sum = T::zero();
        for (i, p) in probs.iter().enumerate() {
            if !p.is_finite_value() || *p < T::zero() {
                return Err(Error::InvalidInput(format!(
                    "probability {i} is {p:?}, expected a finite non-negative value"
                )));
            }
            sum = sum + p.clone();
        }
        if (sum.clone() - T::one()).abs() > T::sum_tolerance() {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum:?}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Uniform distribution on `d` tokens.
    pub fn uniform(d: usize) -> Result<Self> {
        let p = T::one() / T::from_usize_lossy(d.max(1));
        Self::new(vec![p; d])
    }

    /// Point mass on `token`.
    pub fn point_mass(d: usize, token: usize) -> Result<Self> {
        if token >= d {
            return Err(Error::InvalidInput(format!("token {token} out of range for d = {d}")));
        }
        let mut probs = vec![T::zero(); d];
        probs[token] = T::one();
        Self::new(probs)
    }

    pub fn d(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<T> {
        self.probs
    }

    pub fn get(&self, token: TokenId) -> &T {
        &self.probs[token.0]
    }

    /// Largest entry, the per-step `p*`.
    pub fn max_prob(&self) -> T {
        let mut best = self.probs[0].clone();
        for p in &self.probs[1..] {
            if *p > best {
                best = p.clone();
            }
        }
        best
    }

    /// Appends zero-probability tokens up to dictionary size `d`.
    pub fn padded_to(&self, d: usize) -> Result<Self> {
        if d < self.d() {
            return Err(Error::DimensionMismatch { expected: d, found: self.d() });
        }
        let mut probs = self.probs.clone();
        probs.resize(d, T::zero());
        Ok(Self { probs })
    }

    /// Entries sorted non-increasing.
    pub fn sorted_desc(&self) -> Vec<T> {
        let mut v = self.probs.clone();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        v
    }

    /// Lossy copy in `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.probs.iter().map(Scalar::to_f64_lossy).collect()
    }
}

/// Pre-softmax scores; every entry finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "dictionary size must be at least 2, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::InvalidInput(format!("logit {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }
}

/// A text: token ids over a common dictionary size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<TokenId>,
    d: usize,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, d: usize) -> Result<Self> {
        if let Some(t) = tokens.iter().find(|t| t.0 >= d) {
            return Err(Error::CorruptInput(format!(
                "token {} out of range for d = {d}",
                t.0
            )));
        }
        Ok(Self { tokens, d })
    }

    pub fn from_indices(indices: &[usize], d: usize) -> Result<Self> {
        Self::new(indices.iter().copied().map(TokenId).collect(), d)
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `p(i) = exp(l(i)) / sum_j exp(l(j))`, computed after subtracting `max(l)`.
pub fn softmax<T: Real>(logits: &Logits<T>) -> Result<ProbVector<T>> {
    Ok(ProbVector { probs: softmax_values(logits.as_slice())? })
}

/// Softmax over a raw slice; rejects non-finite input.
pub fn softmax_slice<T: Real>(values: &[T]) -> Result<ProbVector<T>> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("softmax needs at least 2 logits".into()));
    }
    Ok(ProbVector { probs: softmax_values(values)? })
}

fn softmax_values<T: Real>(values: &[T]) -> Result<Vec<T>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("softmax input is not finite".into()));
    }
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = values.iter().map(|&v| (v - max).exp()).collect();
    // The max entry contributes exp(0) = 1, so the sum is in [1, d].
    let sum = out.iter().copied().fold(T::zero(), |a, b| a + b);
    for v in &mut out {
        *v = *v / sum;
    }
    Ok(out)
}

/// Inverse-CDF draw from `p`. Zero-probability tokens are never returned.
pub fn sample_categorical<T: Scalar, R: Rng + ?Sized>(p: &ProbVector<T>, rng: &mut R) -> TokenId {
    let u = T::from_f64_lossy(rng.random::<f64>());
    let mut cum = T::zero();
    for (i, pi) in p.probs.iter().enumerate() {
        cum = cum + pi.clone();
        if u < cum {
            return TokenId(i);
        }
    }
    // Rounding left the total just below u; fall back to the last supported token.
    let last = p
        .probs
        .iter()
        .rposition(|pi| *pi > T::zero())
        .unwrap_or(p.probs.len() - 1);
    TokenId(last)
}
