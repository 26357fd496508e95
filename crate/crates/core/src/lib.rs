//! Distribution-preserving watermarks for token-sequence generators.
//!
//! Two schemes are provided. The closed scheme shifts probability mass
//! between rank-matched pairs of a secret balanced coloring; the open scheme
//! perturbs logits with a keyed sparse Gaussian mixture. Both come with
//! key-based detectors, toy sources with known laws, and an oracle suite
//! that checks the schemes' exact and Monte-Carlo properties.
//!
//! ```
//! use tokenmark::{detect, generate, SourceModel, WatermarkKey};
//! use tokenmark::prob::stream_from_seed;
//!
//! let key = WatermarkKey::closed([7u8; 32], 64).unwrap();
//! let model = SourceModel::uniform(64).unwrap();
//! let text = generate(&model, 5000, Some(&key), &mut stream_from_seed(1)).unwrap();
//! let report = detect(&text.tokens, &key, 0.05).unwrap();
//! assert!(report.verdict);
//! ```

pub mod closed;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod keystream;
pub mod open;
pub mod oracles;
pub mod prob;
pub mod scalar;
pub mod sparsemean;
pub mod stats;
pub mod textgen;

use num_rational::BigRational;

pub use closed::{rank_match, shifted_distribution, watermark_distribution, PairedRanking};
pub use detector::{detect, detect_closed, detect_open, DetectionReport};
pub use error::{Error, Result};
pub use keystream::{ClosedStepKey, OpenStepKey, Scheme, SupportMode, WatermarkKey};
pub use prob::{sample_categorical, softmax, Logits, ProbVector, RandomStream, TokenId, TokenSequence};
pub use scalar::{Real, Scalar};
pub use textgen::{generate, GenerationRecord, ModelConfig, SourceModel};

pub type ProbVector64 = ProbVector<f64>;
pub type ProbVector32 = ProbVector<f32>;
pub type ExactProbVector = ProbVector<BigRational>;
pub type Logits64 = Logits<f64>;
pub type Logits32 = Logits<f32>;
pub type PairedRanking64 = PairedRanking<f64>;
pub type ExactPairedRanking = PairedRanking<BigRational>;
