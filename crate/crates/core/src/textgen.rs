//! Toy autoregressive sources with exactly known per-step laws, and the
//! text file formats.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::closed::closed_step;
use crate::error::{Error, Result};
use crate::keystream::{Scheme, WatermarkKey};
use crate::open::{open_step, open_step_from_probs};
use crate::prob::{sample_categorical, softmax, Logits, ProbVector, TokenId, TokenSequence};

/// Serialized form of a [`SourceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Uniform { d: usize },
    Iid { probs: Vec<f64> },
    Markov { initial: Vec<f64>, transition: Vec<Vec<f64>> },
    /// `l(i) = scale - exponent * ln(i + 1)`.
    PowerlawLogits { d: usize, exponent: f64, #[serde(default)] scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceModel {
    Iid(ProbVector),
    Markov { initial: ProbVector, rows: Vec<ProbVector> },
    PowerlawLogits { logits: Logits, probs: ProbVector },
}

impl SourceModel {
    pub fn uniform(d: usize) -> Result<Self> {
        Ok(Self::Iid(ProbVector::uniform(d)?))
    }

    pub fn iid(p: ProbVector) -> Self {
        Self::Iid(p)
    }

    pub fn markov(initial: ProbVector, rows: Vec<ProbVector>) -> Result<Self> {
        let d = initial.d();
        if rows.len() != d || rows.iter().any(|r| r.d() != d) {
            return Err(Error::InvalidInput(format!(
                "markov transition matrix must be {d} x {d}"
            )));
        }
        Ok(Self::Markov { initial, rows })
    }

    pub fn powerlaw_logits(d: usize, exponent: f64, scale: f64) -> Result<Self> {
        let logits = Logits::new((0..d).map(|i| scale - exponent * ((i + 1) as f64).ln()).collect())?;
        let probs = softmax(&logits)?;
        Ok(Self::PowerlawLogits { logits, probs })
    }

    pub fn from_config(config: &ModelConfig) -> Result<Self> {
        match config {
            ModelConfig::Uniform { d } => Self::uniform(*d),
            ModelConfig::Iid { probs } => Ok(Self::Iid(ProbVector::new(probs.clone())?)),
            ModelConfig::Markov { initial, transition } => Self::markov(
                ProbVector::new(initial.clone())?,
                transition.iter().map(|r| ProbVector::new(r.clone())).collect::<Result<_>>()?,
            ),
            ModelConfig::PowerlawLogits { d, exponent, scale } => {
                Self::powerlaw_logits(*d, *exponent, *scale)
            }
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Self::Iid(p) => p.d(),
            Self::Markov { initial, .. } => initial.d(),
            Self::PowerlawLogits { probs, .. } => probs.d(),
        }
    }

    /// Next-token law given the previous token.
    pub fn step_probs(&self, prev: Option<TokenId>) -> &ProbVector {
        match (self, prev) {
            (Self::Iid(p), _) => p,
            (Self::Markov { initial, .. }, None) => initial,
            (Self::Markov { rows, .. }, Some(t)) => &rows[t.0],
            (Self::PowerlawLogits { probs, .. }, _) => probs,
        }
    }

    fn step_logits(&self) -> Option<&Logits> {
        match self {
            Self::PowerlawLogits { logits, .. } => Some(logits),
            _ => None,
        }
    }
}

/// Scheme tag carried by a text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextScheme {
    Closed,
    Open,
    None,
}

impl From<Option<Scheme>> for TextScheme {
    fn from(s: Option<Scheme>) -> Self {
        match s {
            Some(Scheme::Closed) => Self::Closed,
            Some(Scheme::Open) => Self::Open,
            None => Self::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub tokens: TokenSequence,
    pub per_step_pstar: Vec<f64>,
    pub watermarked: bool,
    pub scheme: TextScheme,
}

fn check_key_fits(model: &SourceModel, key: &WatermarkKey) -> Result<()> {
    let fits = match key.scheme() {
        Scheme::Closed => model.d() == key.vocab_size() || model.d() == key.d(),
        Scheme::Open => model.d() == key.d(),
    };
    if fits {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: key.vocab_size(), found: model.d() })
    }
}

/// Samples `n` tokens, watermarking each step iff `key` is given.
pub fn generate<R: Rng + ?Sized>(
    model: &SourceModel,
    n: usize,
    key: Option<&WatermarkKey>,
    rng: &mut R,
) -> Result<GenerationRecord> {
    if n == 0 {
        return Err(Error::InvalidInput("text length must be at least 1".into()));
    }
    if let Some(key) = key {
        check_key_fits(model, key)?;
    }
    let mut tokens = Vec::with_capacity(n);
    let mut pstar = Vec::with_capacity(n);
    let mut prev = None;
    for j in 0..n {
        let p = model.step_probs(prev);
        pstar.push(p.max_prob());
        let step = j as u64;
        let token = match key {
            None => sample_categorical(p, rng),
            Some(k) if k.scheme() == Scheme::Closed => closed_step(p, k, step, rng)?,
            Some(k) => match model.step_logits() {
                Some(l) => open_step(l, k, step, rng)?,
                None => open_step_from_probs(p, k, step, rng)?,
            },
        };
        tokens.push(token);
        prev = Some(token);
    }
    Ok(GenerationRecord {
        tokens: TokenSequence::new(tokens, model.d())?,
        per_step_pstar: pstar,
        watermarked: key.is_some(),
        scheme: key.map(WatermarkKey::scheme).into(),
    })
}

fn mean_gap(record: &GenerationRecord) -> f64 {
    let n = record.per_step_pstar.len() as f64;
    record.per_step_pstar.iter().map(|p| 1.0 - p).sum::<f64>() / n
}

/// Largest admissible `gamma` in the closed completeness condition:
/// `(1/20N) sum_j (1 - p*_j) - sqrt(2 ln(1/delta) / N)`.
pub fn condition_lhs(record: &GenerationRecord, delta: f64) -> f64 {
    let n = record.per_step_pstar.len();
    mean_gap(record) / 20.0 - crate::detector::closed_threshold(n, delta)
}

/// Open analogue: `(eps^2/1200)(1/N) sum_j (1 - p*_j) - eps sqrt(2 ln(1/delta) / N)`.
pub fn condition_lhs_open(record: &GenerationRecord, delta: f64, epsilon: f64) -> f64 {
    let n = record.per_step_pstar.len();
    epsilon * epsilon / 1200.0 * mean_gap(record)
        - crate::detector::open_threshold(n, delta, epsilon)
}

/// JSON text file `{d, scheme, tokens, pstar}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextFile {
    pub d: usize,
    pub scheme: TextScheme,
    pub tokens: Vec<usize>,
    pub pstar: Vec<f64>,
}

impl From<&GenerationRecord> for TextFile {
    fn from(r: &GenerationRecord) -> Self {
        Self {
            d: r.tokens.d(),
            scheme: r.scheme,
            tokens: r.tokens.tokens().iter().map(|t| t.0).collect(),
            pstar: r.per_step_pstar.clone(),
        }
    }
}

impl GenerationRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&TextFile::from(self)).expect("text file serializes")
    }

    /// Whitespace-separated token ids.
    pub fn to_plain(&self) -> String {
        let mut out = self
            .tokens
            .tokens()
            .iter()
            .map(|t| t.0.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push('\n');
        out
    }
}

/// Text read from either format; the plain format carries no metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedText {
    pub d: Option<usize>,
    pub scheme: Option<TextScheme>,
    pub tokens: Vec<usize>,
}

pub fn parse_text(input: &str) -> Result<ParsedText> {
    let trimmed = input.trim_start();
    if trimmed.starts_with('{') {
        let file: TextFile = serde_json::from_str(trimmed)
            .map_err(|e| Error::CorruptInput(format!("text file: {e}")))?;
        if file.pstar.len() != file.tokens.len() {
            return Err(Error::CorruptInput("tokens and pstar lengths differ".into()));
        }
        if let Some(t) = file.tokens.iter().find(|&&t| t >= file.d) {
            return Err(Error::CorruptInput(format!("token {t} out of range for d = {}", file.d)));
        }
        return Ok(ParsedText { d: Some(file.d), scheme: Some(file.scheme), tokens: file.tokens });
    }
    let tokens = trimmed
        .split_whitespace()
        .map(|w| {
            w.parse::<usize>()
                .map_err(|_| Error::CorruptInput(format!("not a token id: {w:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParsedText { d: None, scheme: None, tokens })
}

impl ParsedText {
    /// Checks the text against a key and returns the token sequence in the key's dictionary.
    pub fn for_key(&self, key: &WatermarkKey) -> Result<TokenSequence> {
        match self.scheme {
            Some(TextScheme::Closed) if key.scheme() != Scheme::Closed => {
                return Err(Error::SchemeMismatch { expected: key.scheme(), found: Scheme::Closed })
            }
            Some(TextScheme::Open) if key.scheme() != Scheme::Open => {
                return Err(Error::SchemeMismatch { expected: key.scheme(), found: Scheme::Open })
            }
            _ => {}
        }
        if let Some(d) = self.d {
            if d != key.d() && d != key.vocab_size() {
                return Err(Error::DimensionMismatch { expected: key.vocab_size(), found: d });
            }
        }
        if self.tokens.is_empty() {
            return Err(Error::CorruptInput("text has no tokens".into()));
        }
        TokenSequence::from_indices(&self.tokens, key.d())
    }
}
