use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum StsError {
    /// Incompatible tensor shapes or extents.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A setting that can never produce a valid computation (non-positive
    /// output extent, pooling window larger than the input, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad data handed to an operation (empty dataset, malformed labels, ...).
    #[error("input error: {0}")]
    Input(String),
    /// Operation invoked before its preconditions were established
    /// (eval-mode batch norm before any training step, backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StsError>;
