use std::io;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by how a caller should react: configuration problems,
/// malformed or inconsistent data, and numeric failures during training.
#[derive(Debug, Error)]
pub enum P2tError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch in {stage}: {detail}")]
    Shape { stage: String, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, P2tError>;

pub(crate) fn config_err(msg: impl Into<String>) -> P2tError {
    P2tError::Config(msg.into())
}

pub(crate) fn data_err(msg: impl Into<String>) -> P2tError {
    P2tError::Data(msg.into())
}

pub(crate) fn shape_err(stage: impl Into<String>, detail: impl Into<String>) -> P2tError {
    P2tError::Shape {
        stage: stage.into(),
        detail: detail.into(),
    }
}
