use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{op}: matrix must be square, got {rows}x{cols}")]
    NotSquare { op: &'static str, rows: usize, cols: usize },

    #[error(
        "eigensolver did not converge after {iterations} iterations \
         (residual {residual:.3e}, tolerance {tolerance:.3e})"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("spectral map is not finite at eigenvalue {eigenvalue:e} (index {index})")]
    SpectralMap { index: usize, eigenvalue: f64 },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e} below {threshold:e}")]
    NotPsd { eigenvalue: f64, threshold: f64 },

    #[error("distances not Euclidean: double-centred matrix has eigenvalue {eigenvalue:e}")]
    NotEuclidean { eigenvalue: f64 },

    #[error("kernel has no strictly positive eigenvalue")]
    ZeroKernel,

    #[error("degenerate (zero) data")]
    DegenerateData,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: row {row}, column {col}: {message}")]
    Table {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("alignment: {0}")]
    Alignment(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("server on {addr}: {source}")]
    Server {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Output {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn server(addr: impl Into<String>, source: std::io::Error) -> Self {
        Error::Server {
            addr: addr.into(),
            source,
        }
    }

    /// True when the failure is attributable to the caller's input rather
    /// than to an internal numerical or system fault.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::NoConvergence { .. } | Error::SpectralMap { .. } | Error::Output { .. } | Error::Server { .. } => {
                false
            }
            Error::Json(e) => !e.is_io(),
            Error::Csv(e) => !e.is_io_error(),
            _ => true,
        }
    }
}
