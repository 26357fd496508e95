use thiserror::Error;

use crate::keystream::Scheme;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("scheme mismatch: expected {expected}, found {found}")]
    SchemeMismatch { expected: Scheme, found: Scheme },

    #[error("dimension mismatch: expected d = {expected}, found d = {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("corrupt input: {0}")]
    CorruptInput(String),

    #[error("support scan over {subsets} subsets exceeds the budget of {budget}")]
    InfeasibleScan { subsets: u128, budget: u128 },

    #[error("enumeration too large: {0}")]
    EnumerationTooLarge(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
