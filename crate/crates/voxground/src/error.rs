//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("scene contains no points")]
    EmptyScene,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("level mismatch: expected {expected}, got {got}")]
    LevelError { expected: i32, got: i32 },
    #[error("cannot upsample below level {0}")]
    LevelUnderflow(i32),
    #[error("sample size k={k} out of range 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("operation requires a non-empty grid")]
    EmptyGrid,
    #[error("description has no words")]
    EmptyText,
    #[error("bad attention/model configuration: {0}")]
    ConfigError(String),
    #[error("numeric failure: {0}")]
    NumericError(String),
    #[error("non-deterministic function under grad check: {0}")]
    DeterminismError(String),
    #[error("finite-difference step must be positive")]
    InvalidEps,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("prediction has no voxels")]
    EmptyPrediction,
    #[error("scene generation failed: {0}")]
    GenerationError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
