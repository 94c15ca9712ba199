//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset schema is inconsistent or does not match the file.
    #[error("schema error: {0}")]
    Schema(String),

    /// A raw value could not be mapped or parsed.
    #[error("value error: {0}")]
    Value(String),

    /// A specification object (split ratios, bias rate, sweep grid) is invalid.
    #[error("spec error: {0}")]
    Spec(String),

    /// An operation was asked to work on an empty or degenerate domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Array shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A configuration value is out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Internal state does not match what the caller supplied (stale cache).
    #[error("state error: {0}")]
    State(String),

    /// Training diverged to a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        epoch: usize,
        detail: String,
        /// Per-epoch records collected up to the divergence point.
        history: Box<crate::training::TrainHistory>,
    },

    /// Every run of an experiment failed.
    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
