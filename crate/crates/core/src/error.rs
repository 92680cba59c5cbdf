//! Error type shared by every module.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file header or unsupported layout.
    #[error("format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    /// Invalid voxel data, e.g. a non-finite value.
    #[error("data error at voxel {index}: {message}")]
    Data { index: usize, message: String },

    #[error("unit error: expected {expected}, found {found}")]
    Unit { expected: String, found: String },

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: String, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("invalid phantom spec: {0}")]
    Spec(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("threshold derivation failed: {0}")]
    Derivation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable kind, used in JSON error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Data { .. } => "data",
            Error::Unit { .. } => "unit",
            Error::Parameter { .. } => "parameter",
            Error::Degenerate(_) => "degenerate",
            Error::Shape(_) => "shape",
            Error::EmptyRegion(_) => "empty_region",
            Error::Spec(_) => "spec",
            Error::Manifest(_) => "manifest",
            Error::Derivation(_) => "derivation",
        }
    }

    /// Process exit code: 2 for I/O and format failures, 1 for validation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 2,
            _ => 1,
        }
    }
}
