//! Config-driven sweeps: detection rates under both hypotheses and
//! sparse-mean power curves, with a manifest for reproducibility.
//!
//! Every random quantity is derived from the config's root seed, the
//! experiment's name and the trial index, so outputs do not depend on the
//! worker count.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::detect;
use crate::error::{Error, Result};
use crate::keystream::{derive_seed, derive_seed_u64, Scheme, SupportMode, WatermarkKey};
use crate::prob::stream_from_bytes;
use crate::sparsemean::{power_curve, power_rows_to_csv, PowerGrid};
use crate::stats::{wilson_interval, WILSON_Z_95};
use crate::textgen::{generate, ModelConfig, SourceModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub experiments: Vec<ExperimentSpec>,
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ExperimentKind,
}

/// Open-scheme parameters for detection sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenParams {
    pub epsilon: f64,
    pub k: usize,
    #[serde(default)]
    pub support_mode: SupportMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Unwatermarked texts scored against fresh keys.
    ClosedSoundness { model: ModelConfig, n_tokens: Vec<usize>, deltas: Vec<f64>, texts: usize },
    ClosedCompleteness { model: ModelConfig, n_tokens: Vec<usize>, deltas: Vec<f64>, texts: usize },
    OpenSoundness { model: ModelConfig, open: OpenParams, n_tokens: Vec<usize>, deltas: Vec<f64>, texts: usize },
    OpenCompleteness { model: ModelConfig, open: OpenParams, n_tokens: Vec<usize>, deltas: Vec<f64>, texts: usize },
    SparseMean { grid: PowerGrid },
}

impl ExperimentKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::ClosedSoundness { .. } => "closed-soundness",
            Self::ClosedCompleteness { .. } => "closed-completeness",
            Self::OpenSoundness { .. } => "open-soundness",
            Self::OpenCompleteness { .. } => "open-completeness",
            Self::SparseMean { .. } => "sparse-mean",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.experiments.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("experiment names must be unique".into()));
        }
        for e in &self.experiments {
            if e.name.is_empty() || !e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::InvalidConfig(format!(
                    "experiment name {:?} must be non-empty [A-Za-z0-9_-]",
                    e.name
                )));
            }
            if let Some((n_tokens, deltas, texts)) = e.kind.detection_grid() {
                if n_tokens.is_empty() || n_tokens.contains(&0) || deltas.is_empty() || texts == 0 {
                    return Err(Error::InvalidConfig(format!("{}: empty or zero-sized grid", e.name)));
                }
                if deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
                    return Err(Error::InvalidConfig(format!("{}: deltas must lie in (0, 1)", e.name)));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

impl ExperimentKind {
    fn detection_grid(&self) -> Option<(&[usize], &[f64], usize)> {
        match self {
            Self::ClosedSoundness { n_tokens, deltas, texts, .. }
            | Self::ClosedCompleteness { n_tokens, deltas, texts, .. }
            | Self::OpenSoundness { n_tokens, deltas, texts, .. }
            | Self::OpenCompleteness { n_tokens, deltas, texts, .. } => Some((n_tokens, deltas, *texts)),
            Self::SparseMean { .. } => None,
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub scheme: Scheme,
    pub watermarked: bool,
    pub n: usize,
    pub delta: f64,
    pub trials: u64,
    pub detections: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub mean_statistic: f64,
}

pub const DETECTION_CSV_HEADER: &str =
    "scheme,watermarked,n,delta,trials,detections,rate,ci_lo,ci_hi,mean_statistic";

pub fn detection_rows_to_csv(rows: &[DetectionRow]) -> String {
    let mut out = String::from(DETECTION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.scheme, r.watermarked, r.n, r.delta, r.trials, r.detections, r.rate, r.ci_lo, r.ci_hi,
            r.mean_statistic
        ));
    }
    out
}

struct DetectionSweep<'a> {
    name: &'a str,
    model: &'a ModelConfig,
    scheme: Scheme,
    open: Option<OpenParams>,
    watermarked: bool,
    n_tokens: &'a [usize],
    deltas: &'a [f64],
    texts: usize,
}

fn trial_key(sweep: &DetectionSweep<'_>, root: u64, n: usize, t: u64, d: usize) -> Result<WatermarkKey> {
    let seed = derive_seed(root, &format!("{}/key/n{n}", sweep.name), t);
    match (sweep.scheme, sweep.open) {
        (Scheme::Closed, _) => WatermarkKey::closed(seed, d),
        (Scheme::Open, Some(o)) => WatermarkKey::open(seed, d, o.epsilon, o.k, o.support_mode),
        (Scheme::Open, None) => Err(Error::InvalidConfig("open sweep without parameters".into())),
    }
}

/// One text per `(n, trial)`; every delta is scored on the same texts.
/// Soundness texts are generated without a key and scored against a key the
/// text never saw.
fn run_detection(sweep: &DetectionSweep<'_>, root: u64) -> Result<Vec<DetectionRow>> {
    let model = SourceModel::from_config(sweep.model)?;
    let mut ns = sweep.n_tokens.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut deltas = sweep.deltas.to_vec();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let mut rows = Vec::new();
    for n in ns {
        let reports: Vec<Vec<(bool, f64)>> = (0..sweep.texts as u64)
            .into_par_iter()
            .map(|t| {
                let key = trial_key(sweep, root, n, t, model.d())?;
                let mut rng = stream_from_bytes(derive_seed(root, &format!("{}/text/n{n}", sweep.name), t));
                let record = generate(&model, n, sweep.watermarked.then_some(&key), &mut rng)?;
                let text = crate::prob::TokenSequence::new(record.tokens.tokens().to_vec(), key.d())?;
                deltas
                    .iter()
                    .map(|&delta| detect(&text, &key, delta).map(|r| (r.verdict, r.statistic)))
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (c, &delta) in deltas.iter().enumerate() {
            let detections = reports.iter().filter(|r| r[c].0).count() as u64;
            let trials = sweep.texts as u64;
            let (ci_lo, ci_hi) = wilson_interval(detections, trials, WILSON_Z_95);
            let mean_statistic = reports.iter().map(|r| r[c].1).sum::<f64>() / trials as f64;
            rows.push(DetectionRow {
                scheme: sweep.scheme,
                watermarked: sweep.watermarked,
                n,
                delta,
                trials,
                detections,
                rate: detections as f64 / trials as f64,
                ci_lo,
                ci_hi,
                mean_statistic,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: String,
    pub output: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub root_seed: u64,
    pub workers: usize,
    pub experiments: Vec<ManifestEntry>,
}

/// Named output files, in config order, followed by `manifest.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub files: Vec<(String, String)>,
    pub manifest: Manifest,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }
}

pub fn run_experiments(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| run_all(config))
}

fn run_all(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut files = Vec::new();
    let mut entries = Vec::new();
    for spec in &config.experiments {
        let seed = derive_seed_u64(config.seed, &spec.name, 0);
        let output = format!("{}.csv", spec.name);
        let sweep = |model, scheme, open, watermarked, n_tokens, deltas, texts| DetectionSweep {
            name: &spec.name,
            model,
            scheme,
            open,
            watermarked,
            n_tokens,
            deltas,
            texts,
        };
        let csv = match &spec.kind {
            ExperimentKind::ClosedSoundness { model, n_tokens, deltas, texts } => detection_rows_to_csv(
                &run_detection(&sweep(model, Scheme::Closed, None, false, n_tokens, deltas, *texts), seed)?,
            ),
            ExperimentKind::ClosedCompleteness { model, n_tokens, deltas, texts } => detection_rows_to_csv(
                &run_detection(&sweep(model, Scheme::Closed, None, true, n_tokens, deltas, *texts), seed)?,
            ),
            ExperimentKind::OpenSoundness { model, open, n_tokens, deltas, texts } => detection_rows_to_csv(
                &run_detection(&sweep(model, Scheme::Open, Some(*open), false, n_tokens, deltas, *texts), seed)?,
            ),
            ExperimentKind::OpenCompleteness { model, open, n_tokens, deltas, texts } => detection_rows_to_csv(
                &run_detection(&sweep(model, Scheme::Open, Some(*open), true, n_tokens, deltas, *texts), seed)?,
            ),
            ExperimentKind::SparseMean { grid } => power_rows_to_csv(&power_curve(grid, seed)?),
        };
        files.push((output.clone(), csv));
        entries.push(ManifestEntry { name: spec.name.clone(), kind: spec.kind.label().into(), output, seed });
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config.digest(),
        root_seed: config.seed,
        workers: config.workers,
        experiments: entries,
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    files.push(("manifest.json".into(), manifest_json));
    Ok(ExperimentOutput { files, manifest })
}
