use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the certification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: file not found")]
    NotFound { path: PathBuf },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cloud is empty")]
    EmptyCloud,

    #[error("no valid correspondences: every associated map normal is invalid")]
    NoCorrespondences,

    #[error("no inliers left after trimming at d = {d}")]
    NoInliers { d: f64 },

    #[error("too few active rows ({active}) to estimate a 6-DoF pose")]
    TooFewRows { active: usize },

    /// The normal matrix is rank deficient or too ill-conditioned to invert:
    /// the scene does not constrain every pose component.
    #[error("degenerate geometry: normal-matrix condition number {condition:.3e}")]
    DegenerateGeometry { condition: f64 },

    #[error("fault mask row {row} is not an active row of the system")]
    InvalidMask { row: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::NotFound { .. } | Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
