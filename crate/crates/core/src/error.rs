use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed manifest record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },

    #[error("duplicate app_id {0:?}")]
    DuplicateAppId(String),

    #[error("unknown app_id {0:?}")]
    UnknownAppId(String),

    #[error("cannot decode image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("distance normalization is only defined for cosine metrics")]
    UnsupportedNormalization,

    #[error("descriptor set is empty; SIFT distance is undefined")]
    EmptyDescriptors,

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("corrupt {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("config mismatch: artifact was produced with config {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short identifier, used for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::DuplicateAppId(_) => "duplicate_app_id",
            Error::UnknownAppId(_) => "unknown_app_id",
            Error::Image { .. } => "image",
            Error::Shape(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Asymmetric { .. } => "asymmetric",
            Error::Model(_) => "model",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnsupportedNormalization => "unsupported_normalization",
            Error::EmptyDescriptors => "empty_descriptors",
            Error::InvalidCurve(_) => "invalid_curve",
            Error::Format { .. } => "format",
            Error::ConfigMismatch { .. } => "config_mismatch",
        }
    }
}
