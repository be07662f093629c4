use thiserror::Error;

/// Errors produced by the labelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched sizes between values that must agree (marker counts,
    /// matrix dimensions, vector lengths).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A parameter value outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A frame that cannot be normalized (too few visible markers,
    /// coincident or coplanar marker clouds).
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),

    /// Non-finite values or other numeric failures, with enough context
    /// to locate the computation that produced them.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent data (conflicting track ids, overlapping subject sets,
    /// frames out of order).
    #[error("data error: {0}")]
    Data(String),

    /// A file whose contents do not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint that cannot be used (version or shape mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable category name, used by the CLI for machine-parsable errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateFrame(_) => "degenerate-frame",
            Error::Numeric(_) => "numeric",
            Error::Domain(_) => "domain",
            Error::Data(_) => "data",
            Error::Format(_) => "format",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
