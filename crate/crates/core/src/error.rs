use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported resolution {height}x{width}: {reason}")]
    Resolution {
        height: usize,
        width: usize,
        reason: String,
    },

    #[error("backend `{kind}` unavailable: {reason} (use backend.kind = \"synthetic\" for the CPU fallback)")]
    BackendUnavailable { kind: String, reason: String },

    #[error("feature provider unavailable: {0}")]
    FeatureUnavailable(String),

    #[error("layer id {layer} out of range (backend has {available} attention layers)")]
    LayerRange { layer: usize, available: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite {quantity} at step {step}, layer {layer}")]
    NonFinite {
        quantity: &'static str,
        step: usize,
        layer: usize,
    },

    #[error("cancelled at step {0}")]
    Cancelled(usize),

    #[error("image format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
