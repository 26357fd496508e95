//! Deterministic derivation of per-step secret key material.
//!
//! # Derivation format (version 1)
//!
//! All material is read from a counter-mode PRF built on SHA-256. Block
//! `c` of lane `L` at step `j` is
//!
//! ```text
//! SHA-256( "TMK1" || master_seed[32] || le64(j) || le32(L) || le32(c) )
//! ```
//!
//! (52 bytes of input, a single compression). The 32-byte digest is read as
//! four little-endian `u64` words; a lane's word stream is blocks
//! `c = 0, 1, 2, ...` concatenated.
//!
//! * `uniform_below(n)`: draw words until `w >= (2^64 - n) mod n`, return `w mod n`.
//! * `unit(w)`: `((w >> 12) + 0.5) * 2^-52`, always in the open interval (0, 1).
//! * Lane 1, coloring: start from `[+1; d/2] ++ [-1; d/2]` and Fisher–Yates
//!   shuffle, `for i in (1..d).rev() { swap(i, uniform_below(i + 1)) }`.
//! * Lane 2, flip: `+1` if bit 0 of word 0 is set, else `-1`.
//! * Lane 3, Gaussian: words `2m, 2m+1` give `u1, u2`; with
//!   `rho = sqrt(-2 ln u1)`, coordinate `2m` is `eps * rho * cos(2 pi u2)` and
//!   coordinate `2m+1` is `eps * rho * sin(2 pi u2)`.
//! * Lane 4, support: Floyd's algorithm, `for j in d-k..d { t = uniform_below(j + 1);
//!   insert(if taken(t) { j } else { t }) }`, reported ascending. In
//!   fixed-per-key mode the support is always drawn at step 0.
//! * Lane 5, direction: same rule as lane 2.
//!
//! Closed keys in fixed-coloring mode read lane 1 at step 0 for every step;
//! the flip is still per step.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const KEY_FILE_VERSION: u32 = 1;
const PRF_TAG: &[u8; 4] = b"TMK1";

const LANE_COLORING: u32 = 1;
const LANE_FLIP: u32 = 2;
const LANE_GAUSSIAN: u32 = 3;
const LANE_SUPPORT: u32 = 4;
const LANE_DIRECTION: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Closed,
    Open,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Closed => "closed",
            Scheme::Open => "open",
        })
    }
}

/// Whether the open-scheme support `S` is shared by all steps or redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportMode {
    #[default]
    FixedPerKey,
    FreshPerStep,
}

/// Master secret plus scheme parameters; every per-step key is a pure
/// function of this value and the step index.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    master_seed: [u8; 32],
    scheme: Scheme,
    d: usize,
    epsilon: f64,
    k: usize,
    support_mode: SupportMode,
    padded: bool,
    fixed_coloring: bool,
}

impl WatermarkKey {
    /// Closed-scheme key. An odd `vocab_size` is padded with one spurious token.
    pub fn closed(master_seed: [u8; 32], vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidKey(format!(
                "dictionary size must be at least 2, got {vocab_size}"
            )));
        }
        let padded = vocab_size % 2 == 1;
        Ok(Self {
            master_seed,
            scheme: Scheme::Closed,
            d: vocab_size + usize::from(padded),
            epsilon: 0.0,
            k: 0,
            support_mode: SupportMode::FixedPerKey,
            padded,
            fixed_coloring: false,
        })
    }

    /// Reuse step 0's coloring at every step (flips stay per step).
    pub fn with_fixed_coloring(mut self, fixed: bool) -> Self {
        self.fixed_coloring = fixed;
        self
    }

    pub fn open(
        master_seed: [u8; 32],
        d: usize,
        epsilon: f64,
        k: usize,
        support_mode: SupportMode,
    ) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidKey(format!("dictionary size must be at least 2, got {d}")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidKey(format!("epsilon must be positive, got {epsilon}")));
        }
        if k < 1 || k > d {
            return Err(Error::InvalidKey(format!("sparsity k must be in [1, {d}], got {k}")));
        }
        Ok(Self {
            master_seed,
            scheme: Scheme::Open,
            d,
            epsilon,
            k,
            support_mode,
            padded: false,
            fixed_coloring: false,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Dictionary size used by the key (after padding).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Dictionary size of the source model, i.e. `d` minus any spurious token.
    pub fn vocab_size(&self) -> usize {
        self.d - usize::from(self.padded)
    }

    pub fn padded(&self) -> bool {
        self.padded
    }

    pub fn fixed_coloring(&self) -> bool {
        self.fixed_coloring
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn support_mode(&self) -> SupportMode {
        self.support_mode
    }

    pub fn master_seed(&self) -> &[u8; 32] {
        &self.master_seed
    }

    pub(crate) fn expect_scheme(&self, expected: Scheme) -> Result<()> {
        if self.scheme == expected {
            Ok(())
        } else {
            Err(Error::SchemeMismatch { expected, found: self.scheme })
        }
    }

    pub fn to_file(&self) -> KeyFile {
        let open = self.scheme == Scheme::Open;
        KeyFile {
            version: KEY_FILE_VERSION,
            scheme: self.scheme,
            d: self.d,
            k: open.then_some(self.k),
            epsilon: open.then_some(self.epsilon),
            support_mode: open.then_some(self.support_mode),
            master_seed_base64: BASE64.encode(self.master_seed),
            padded: self.padded,
            fixed_coloring: self.fixed_coloring,
        }
    }

    pub fn from_file(file: &KeyFile) -> Result<Self> {
        if file.version != KEY_FILE_VERSION {
            return Err(Error::CorruptInput(format!(
                "unsupported key file version {}",
                file.version
            )));
        }
        let bytes = BASE64
            .decode(file.master_seed_base64.trim())
            .map_err(|e| Error::CorruptInput(format!("master seed is not base64: {e}")))?;
        let master_seed: [u8; 32] = bytes.try_into().map_err(|b: Vec<u8>| {
            Error::CorruptInput(format!("master seed must be 32 bytes, got {}", b.len()))
        })?;
        match file.scheme {
            Scheme::Closed => {
                if file.k.is_some() || file.epsilon.is_some() {
                    return Err(Error::CorruptInput(
                        "closed key must not carry k or epsilon".into(),
                    ));
                }
                if file.d % 2 == 1 || (file.padded && file.d < 3) {
                    return Err(Error::CorruptInput(format!(
                        "closed key dictionary size must be even, got {}",
                        file.d
                    )));
                }
                let vocab = file.d - usize::from(file.padded);
                let key = Self::closed(master_seed, vocab)?;
                Ok(key.with_fixed_coloring(file.fixed_coloring))
            }
            Scheme::Open => {
                let epsilon = file
                    .epsilon
                    .ok_or_else(|| Error::CorruptInput("open key needs epsilon".into()))?;
                let k = file.k.ok_or_else(|| Error::CorruptInput("open key needs k".into()))?;
                Self::open(master_seed, file.d, epsilon, k, file.support_mode.unwrap_or_default())
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("key file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk key representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyFile {
    pub version: u32,
    pub scheme: Scheme,
    pub d: usize,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub support_mode: Option<SupportMode>,
    pub master_seed_base64: String,
    #[serde(default)]
    pub padded: bool,
    #[serde(default)]
    pub fixed_coloring: bool,
}

/// One closed step: a balanced coloring and a sign flip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosedStepKey {
    coloring: Vec<i8>,
    flip: i8,
}

impl ClosedStepKey {
    pub fn new(coloring: Vec<i8>, flip: i8) -> Result<Self> {
        if flip != 1 && flip != -1 {
            return Err(Error::InvalidKey(format!("flip must be +1 or -1, got {flip}")));
        }
        check_balanced(&coloring)?;
        Ok(Self { coloring, flip })
    }

    pub fn coloring(&self) -> &[i8] {
        &self.coloring
    }

    pub fn flip(&self) -> i8 {
        self.flip
    }

    /// `r * Delta(token)`.
    pub fn signed_color(&self, token: usize) -> i8 {
        self.flip * self.coloring[token]
    }
}

pub(crate) fn check_balanced(coloring: &[i8]) -> Result<()> {
    let d = coloring.len();
    if d < 2 || d % 2 == 1 {
        return Err(Error::InvalidKey(format!("coloring length must be even and >= 2, got {d}")));
    }
    let mut plus = 0usize;
    for &c in coloring {
        match c {
            1 => plus += 1,
            -1 => {}
            other => {
                return Err(Error::InvalidKey(format!("coloring entry {other} is not +1 or -1")))
            }
        }
    }
    if plus * 2 != d {
        return Err(Error::InvalidKey(format!(
            "coloring is unbalanced: {plus} of {d} entries are +1"
        )));
    }
    Ok(())
}

/// One open step: the detector's Gaussian vector plus the sampler-only
/// support and direction.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenStepKey {
    gaussian: Vec<f64>,
    support: Vec<usize>,
    direction: i8,
    mean_vector: Vec<f64>,
}

impl OpenStepKey {
    pub fn new(gaussian: Vec<f64>, support: Vec<usize>, direction: i8) -> Result<Self> {
        let d = gaussian.len();
        if direction != 1 && direction != -1 {
            return Err(Error::InvalidKey(format!("direction must be +1 or -1, got {direction}")));
        }
        let set: BTreeSet<usize> = support.iter().copied().collect();
        if set.is_empty() || set.len() != support.len() || set.iter().any(|&i| i >= d) {
            return Err(Error::InvalidKey("support must be a non-empty subset of [d]".into()));
        }
        let support: Vec<usize> = set.into_iter().collect();
        let mean_vector = mean_vector(d, &support);
        Ok(Self { gaussian, support, direction, mean_vector })
    }

    pub fn gaussian(&self) -> &[f64] {
        &self.gaussian
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn direction(&self) -> i8 {
        self.direction
    }

    /// `k^{-1/2} 1_S`.
    pub fn mean_vector(&self) -> &[f64] {
        &self.mean_vector
    }

    pub fn d(&self) -> usize {
        self.gaussian.len()
    }
}

pub fn mean_vector(d: usize, support: &[usize]) -> Vec<f64> {
    let w = 1.0 / (support.len() as f64).sqrt();
    let mut mu = vec![0.0; d];
    for &i in support {
        mu[i] = w;
    }
    mu
}

/// Word stream of one (seed, step, lane).
pub struct PrfStream<'a> {
    seed: &'a [u8; 32],
    step: u64,
    lane: u32,
    counter: u32,
    words: [u64; 4],
    next: usize,
}

impl<'a> PrfStream<'a> {
    pub fn new(seed: &'a [u8; 32], step: u64, lane: u32) -> Self {
        Self { seed, step, lane, counter: 0, words: [0; 4], next: 4 }
    }

    /// Starts reading at word `4 * block`.
    fn at_block(seed: &'a [u8; 32], step: u64, lane: u32, block: u32) -> Self {
        Self { seed, step, lane, counter: block, words: [0; 4], next: 4 }
    }

    pub fn next_u64(&mut self) -> u64 {
        if self.next == 4 {
            self.words = prf_block(self.seed, self.step, self.lane, self.counter);
            self.counter = self.counter.wrapping_add(1);
            self.next = 0;
        }
        let w = self.words[self.next];
        self.next += 1;
        w
    }

    /// Unbiased integer in `[0, n)`, `n >= 1`.
    pub fn uniform_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let reject_below = n.wrapping_neg() % n;
        loop {
            let w = self.next_u64();
            if w >= reject_below {
                return w % n;
            }
        }
    }

    pub fn sign(&mut self) -> i8 {
        if self.next_u64() & 1 == 1 {
            1
        } else {
            -1
        }
    }
}

pub fn prf_block(seed: &[u8; 32], step: u64, lane: u32, counter: u32) -> [u64; 4] {
    let mut h = Sha256::new();
    h.update(PRF_TAG);
    h.update(seed);
    h.update(step.to_le_bytes());
    h.update(lane.to_le_bytes());
    h.update(counter.to_le_bytes());
    let digest = h.finalize();
    let mut words = [0u64; 4];
    for (w, chunk) in words.iter_mut().zip(digest.chunks_exact(8)) {
        *w = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    }
    words
}

/// Maps a word to the open interval (0, 1).
pub fn unit_interval(w: u64) -> f64 {
    ((w >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let rho = (-2.0 * unit_interval(a).ln()).sqrt();
    let theta = std::f64::consts::TAU * unit_interval(b);
    (rho * theta.cos(), rho * theta.sin())
}

pub fn balanced_coloring(stream: &mut PrfStream<'_>, d: usize) -> Vec<i8> {
    let mut coloring: Vec<i8> = (0..d).map(|i| if i < d / 2 { 1 } else { -1 }).collect();
    for i in (1..d).rev() {
        let j = stream.uniform_below(i as u64 + 1) as usize;
        coloring.swap(i, j);
    }
    coloring
}

/// Floyd's algorithm; ascending output.
pub fn floyd_subset(stream: &mut PrfStream<'_>, d: usize, k: usize) -> Vec<usize> {
    let mut chosen = BTreeSet::new();
    for j in (d - k)..d {
        let t = stream.uniform_below(j as u64 + 1) as usize;
        if !chosen.insert(t) {
            chosen.insert(j);
        }
    }
    chosen.into_iter().collect()
}

pub fn derive_closed_step(key: &WatermarkKey, step: u64) -> Result<ClosedStepKey> {
    key.expect_scheme(Scheme::Closed)?;
    let color_step = if key.fixed_coloring { 0 } else { step };
    let coloring = balanced_coloring(&mut PrfStream::new(&key.master_seed, color_step, LANE_COLORING), key.d);
    let flip = PrfStream::new(&key.master_seed, step, LANE_FLIP).sign();
    Ok(ClosedStepKey { coloring, flip })
}

pub fn derive_open_step(key: &WatermarkKey, step: u64) -> Result<OpenStepKey> {
    key.expect_scheme(Scheme::Open)?;
    let d = key.d;
    let mut stream = PrfStream::new(&key.master_seed, step, LANE_GAUSSIAN);
    let mut gaussian = Vec::with_capacity(d + 1);
    while gaussian.len() < d {
        let (z0, z1) = box_muller(stream.next_u64(), stream.next_u64());
        gaussian.push(key.epsilon * z0);
        gaussian.push(key.epsilon * z1);
    }
    gaussian.truncate(d);
    let support_step = match key.support_mode {
        SupportMode::FixedPerKey => 0,
        SupportMode::FreshPerStep => step,
    };
    let support = floyd_subset(&mut PrfStream::new(&key.master_seed, support_step, LANE_SUPPORT), d, key.k);
    let direction = PrfStream::new(&key.master_seed, step, LANE_DIRECTION).sign();
    let mean_vector = mean_vector(d, &support);
    Ok(OpenStepKey { gaussian, support, direction, mean_vector })
}

/// `G_step(token)` alone, reading only the PRF block that holds it.
/// Bit-identical to `derive_open_step(key, step)?.gaussian()[token]`.
pub fn gaussian_entry(key: &WatermarkKey, step: u64, token: usize) -> Result<f64> {
    key.expect_scheme(Scheme::Open)?;
    if token >= key.d {
        return Err(Error::CorruptInput(format!("token {token} out of range for d = {}", key.d)));
    }
    let pair = token / 2;
    let block = (pair / 2) as u32;
    let mut stream = PrfStream::at_block(&key.master_seed, step, LANE_GAUSSIAN, block);
    if pair % 2 == 1 {
        stream.next_u64();
        stream.next_u64();
    }
    let (z0, z1) = box_muller(stream.next_u64(), stream.next_u64());
    Ok(key.epsilon * if token.is_multiple_of(2) { z0 } else { z1 })
}

/// 32 bytes of seed material for `(root, label, index)`, used to give every
/// experiment trial its own independent key and text stream.
pub fn derive_seed(root: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"TMK-SEED");
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn derive_seed_u64(root: u64, label: &str, index: u64) -> u64 {
    let s = derive_seed(root, label, index);
    u64::from_le_bytes(s[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn test_seed() -> [u8; 32] {
        let mut s = [0u8; 32];
        for (i, b) in s.iter_mut().enumerate() {
            *b = i as u8;
        }
        s
    }

    #[test]
    fn closed_derivation_is_deterministic_and_balanced() {
        let key = WatermarkKey::closed(test_seed(), 4).unwrap();
        for step in 0..200 {
            let a = derive_closed_step(&key, step).unwrap();
            assert_eq!(a, derive_closed_step(&key, step).unwrap());
            assert_eq!(a.coloring().iter().map(|&c| c as i32).sum::<i32>(), 0);
        }
    }

    #[test]
    fn scheme_mismatch_is_reported() {
        let key = WatermarkKey::closed(test_seed(), 4).unwrap();
        assert!(matches!(derive_open_step(&key, 0), Err(Error::SchemeMismatch { .. })));
        let open = WatermarkKey::open(test_seed(), 4, 0.5, 2, SupportMode::FixedPerKey).unwrap();
        assert!(matches!(derive_closed_step(&open, 0), Err(Error::SchemeMismatch { .. })));
    }

    #[test]
    fn closed_pairs_are_uniform() {
        // C(4,2) colorings times two flips.
        let key = WatermarkKey::closed(test_seed(), 4).unwrap();
        let steps = 100_000u64;
        let mut counts: HashMap<(Vec<i8>, i8), u64> = HashMap::new();
        for step in 0..steps {
            let k = derive_closed_step(&key, step).unwrap();
            *counts.entry((k.coloring().to_vec(), k.flip())).or_default() += 1;
        }
        assert_eq!(counts.len(), 12);
        for (pair, c) in counts {
            let f = c as f64 / steps as f64;
            assert!((f - 1.0 / 12.0).abs() < 0.005, "{pair:?}: {f}");
        }
    }

    #[test]
    fn fixed_coloring_reuses_step_zero() {
        let key = WatermarkKey::closed(test_seed(), 8).unwrap().with_fixed_coloring(true);
        let first = derive_closed_step(&key, 0).unwrap();
        let mut flips = 0;
        for step in 1..64 {
            let k = derive_closed_step(&key, step).unwrap();
            assert_eq!(k.coloring(), first.coloring());
            flips += i32::from(k.flip() == 1);
        }
        assert!(flips > 10 && flips < 54);
    }

    #[test]
    fn odd_dictionary_is_padded() {
        let key = WatermarkKey::closed(test_seed(), 63).unwrap();
        assert_eq!(key.d(), 64);
        assert_eq!(key.vocab_size(), 63);
        assert!(key.padded());
    }

    #[test]
    fn mean_vector_example() {
        let mu = mean_vector(4, &[0, 2]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in mu.iter().zip([h, 0.0, h, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let step = OpenStepKey::new(vec![0.0; 4], vec![2, 0], 1).unwrap();
        assert_eq!(step.support(), &[0, 2]);
        let norm: f64 = step.mean_vector().iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn open_derivation_shapes() {
        for mode in [SupportMode::FixedPerKey, SupportMode::FreshPerStep] {
            let key = WatermarkKey::open(test_seed(), 7, 0.5, 3, mode).unwrap();
            let s0 = derive_open_step(&key, 0).unwrap();
            let s5 = derive_open_step(&key, 5).unwrap();
            assert_eq!(s5, derive_open_step(&key, 5).unwrap());
            assert_eq!(s0.gaussian().len(), 7);
            assert_eq!(s0.support().len(), 3);
            assert!(s0.support().windows(2).all(|w| w[0] < w[1]));
            assert_ne!(s0.gaussian(), s5.gaussian());
            if mode == SupportMode::FixedPerKey {
                assert_eq!(s0.support(), s5.support());
            }
        }
    }

    #[test]
    fn gaussian_entry_matches_full_derivation() {
        let key = WatermarkKey::open(test_seed(), 13, 0.7, 2, SupportMode::FreshPerStep).unwrap();
        for step in [0u64, 1, 17, 1 << 40] {
            let full = derive_open_step(&key, step).unwrap();
            for i in 0..13 {
                assert_eq!(gaussian_entry(&key, step, i).unwrap().to_bits(), full.gaussian()[i].to_bits());
            }
        }
        assert!(gaussian_entry(&key, 0, 13).is_err());
    }

    #[test]
    fn uniform_below_covers_range() {
        let seed = test_seed();
        let mut s = PrfStream::new(&seed, 0, 99);
        let mut seen = [0u32; 7];
        for _ in 0..7000 {
            seen[s.uniform_below(7) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850 && c < 1150), "{seen:?}");
        assert_eq!(s.uniform_below(1), 0);
    }

    #[test]
    fn unit_interval_is_open() {
        assert!(unit_interval(0) > 0.0);
        assert!(unit_interval(u64::MAX) < 1.0);
    }

    #[test]
    fn key_validation() {
        assert!(WatermarkKey::closed(test_seed(), 1).is_err());
        assert!(WatermarkKey::open(test_seed(), 4, 0.0, 2, SupportMode::FixedPerKey).is_err());
        assert!(WatermarkKey::open(test_seed(), 4, 0.5, 0, SupportMode::FixedPerKey).is_err());
        assert!(WatermarkKey::open(test_seed(), 4, 0.5, 5, SupportMode::FixedPerKey).is_err());
        assert!(ClosedStepKey::new(vec![1, 1, -1], 1).is_err());
        assert!(ClosedStepKey::new(vec![1, 1, 1, -1], 1).is_err());
        assert!(ClosedStepKey::new(vec![1, -1], 0).is_err());
    }

    #[test]
    fn key_file_round_trip() {
        let open = WatermarkKey::open(test_seed(), 64, 0.5, 8, SupportMode::FreshPerStep).unwrap();
        assert_eq!(WatermarkKey::from_json(&open.to_json()).unwrap(), open);
        let closed = WatermarkKey::closed(test_seed(), 63).unwrap().with_fixed_coloring(true);
        let json = closed.to_json();
        assert!(json.contains("\"padded\": true"));
        assert_eq!(WatermarkKey::from_json(&json).unwrap(), closed);
    }

    #[test]
    fn corrupt_key_files_are_rejected() {
        let mut file = WatermarkKey::closed(test_seed(), 4).unwrap().to_file();
        file.master_seed_base64 = "AAAA".into();
        assert!(WatermarkKey::from_file(&file).is_err());
        let mut file = WatermarkKey::closed(test_seed(), 4).unwrap().to_file();
        file.k = Some(2);
        assert!(WatermarkKey::from_file(&file).is_err());
        let mut file = WatermarkKey::closed(test_seed(), 4).unwrap().to_file();
        file.d = 5;
        assert!(WatermarkKey::from_file(&file).is_err());
        assert!(WatermarkKey::from_json("{\"version\": 1").is_err());
    }
}
