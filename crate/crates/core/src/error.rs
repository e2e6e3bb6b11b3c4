use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("loss must be a single-element tensor, got shape {0}")]
    NotScalar(String),

    #[error("tensor does not belong to the active tape")]
    NotOnTape,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame {frame}: {detail}")]
    Annotation { frame: usize, detail: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = core::result::Result<T, Error>;
