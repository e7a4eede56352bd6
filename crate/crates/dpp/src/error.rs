//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A generation spec violates its invariants.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// A planning query references obstacle cells or is out of bounds.
    #[error("invalid query: {0}")]
    InvalidQuery(String),

    /// No route exists between the requested endpoints.
    #[error("no path between start and goal")]
    NoPath,

    /// A file does not conform to the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Malformed in-memory input (shape mismatch, degenerate trajectory, bad parameter).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dataset generation could not complete.
    #[error("generation error: {0}")]
    Generation(String),

    /// A checkpoint is incompatible with the requested configuration.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// Training produced a non-finite loss.
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
