//! Key-based detectors for both schemes.
//!
//! Closed: `Z = mean_j r_j Delta_j(x_j)`, flagged when `Z >= sqrt(2 ln(1/delta) / N)`.
//! Open: `Z = mean_j G_j(x_j)`, flagged when `Z >= eps * sqrt(2 ln(1/delta) / N)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keystream::{derive_closed_step, gaussian_entry, Scheme, WatermarkKey};
use crate::prob::TokenSequence;
use crate::stats::normal_sf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scheme: Scheme,
    pub n_tokens: usize,
    pub delta: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub verdict: bool,
}

impl DetectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("delta must be in (0, 1), got {delta}")))
    }
}

/// `sqrt(2 ln(1/delta) / n)`.
pub fn closed_threshold(n: usize, delta: f64) -> f64 {
    (2.0 * (1.0 / delta).ln() / n as f64).sqrt()
}

pub fn open_threshold(n: usize, delta: f64, epsilon: f64) -> f64 {
    epsilon * closed_threshold(n, delta)
}

fn check_text(text: &TokenSequence, key: &WatermarkKey) -> Result<()> {
    if text.is_empty() {
        return Err(Error::InvalidInput("cannot detect on an empty text".into()));
    }
    if let Some(t) = text.tokens().iter().find(|t| t.0 >= key.d()) {
        return Err(Error::CorruptInput(format!(
            "token {} out of range for key dictionary size {}",
            t.0,
            key.d()
        )));
    }
    Ok(())
}

/// Closed detector over an arbitrary `r_j Delta_j(x_j)` source.
pub fn detect_closed_with(
    n_tokens: usize,
    delta: f64,
    mut signed_color: impl FnMut(usize) -> Result<f64>,
) -> Result<DetectionReport> {
    check_delta(delta)?;
    if n_tokens == 0 {
        return Err(Error::InvalidInput("cannot detect on an empty text".into()));
    }
    let mut sum = 0.0;
    for j in 0..n_tokens {
        sum += signed_color(j)?;
    }
    let statistic = sum / n_tokens as f64;
    let threshold = closed_threshold(n_tokens, delta);
    // Hoeffding: P(Z >= t) <= exp(-N t^2 / 2).
    let p_value = (-(n_tokens as f64) * statistic.max(0.0).powi(2) / 2.0).exp();
    Ok(DetectionReport {
        scheme: Scheme::Closed,
        n_tokens,
        delta,
        statistic,
        threshold,
        p_value,
        verdict: statistic >= threshold,
    })
}

pub fn detect_closed(text: &TokenSequence, key: &WatermarkKey, delta: f64) -> Result<DetectionReport> {
    key.expect_scheme(Scheme::Closed)?;
    check_text(text, key)?;
    let tokens = text.tokens();
    detect_closed_with(tokens.len(), delta, |j| {
        let step = derive_closed_step(key, j as u64)?;
        Ok(f64::from(step.signed_color(tokens[j].0)))
    })
}

/// Open detector over an arbitrary `G_j(x_j)` source with noise scale `epsilon`.
pub fn detect_open_with(
    n_tokens: usize,
    delta: f64,
    epsilon: f64,
    mut key_value: impl FnMut(usize) -> Result<f64>,
) -> Result<DetectionReport> {
    check_delta(delta)?;
    if n_tokens == 0 {
        return Err(Error::InvalidInput("cannot detect on an empty text".into()));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut sum = 0.0;
    for j in 0..n_tokens {
        sum += key_value(j)?;
    }
    let statistic = sum / n_tokens as f64;
    let threshold = open_threshold(n_tokens, delta, epsilon);
    // Under H0, Z ~ N(0, eps^2 / N) exactly.
    let p_value = normal_sf((n_tokens as f64).sqrt() * statistic.max(0.0) / epsilon);
    Ok(DetectionReport {
        scheme: Scheme::Open,
        n_tokens,
        delta,
        statistic,
        threshold,
        p_value,
        verdict: statistic >= threshold,
    })
}

pub fn detect_open(text: &TokenSequence, key: &WatermarkKey, delta: f64) -> Result<DetectionReport> {
    key.expect_scheme(Scheme::Open)?;
    check_text(text, key)?;
    let tokens = text.tokens();
    detect_open_with(tokens.len(), delta, key.epsilon(), |j| {
        gaussian_entry(key, j as u64, tokens[j].0)
    })
}

/// Dispatches on the key's scheme.
pub fn detect(text: &TokenSequence, key: &WatermarkKey, delta: f64) -> Result<DetectionReport> {
    match key.scheme() {
        Scheme::Closed => detect_closed(text, key, delta),
        Scheme::Open => detect_open(text, key, delta),
    }
}
