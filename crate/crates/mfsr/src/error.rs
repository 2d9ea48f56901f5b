use std::path::PathBuf;

/// Errors produced by the library.
///
/// File-format problems are split into separate variants so callers can
/// distinguish a malformed header from a truncated payload or an
/// unsupported (but recognisable) format.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("{path}: truncated payload: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: unsupported format: {detail}")]
    Unsupported { path: PathBuf, detail: String },

    #[error("{path}: invalid manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },

    #[error("dimension mismatch in {context}: expected {expected_w}x{expected_h}, got {actual_w}x{actual_h}")]
    DimensionMismatch {
        context: &'static str,
        expected_w: usize,
        expected_h: usize,
        actual_w: usize,
        actual_h: usize,
    },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time step {tau} exceeds stability bound {bound}")]
    TimeStep { tau: f64, bound: f64 },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
