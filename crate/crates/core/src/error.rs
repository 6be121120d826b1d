use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("EM did not converge after {iterations} iterations (best log-likelihood {best_log_likelihood})")]
    Convergence {
        iterations: usize,
        best_log_likelihood: f64,
    },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("{path}:{line}: {message}")]
    Ingestion {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("corrupt file {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad class of the error, used by front-ends to pick exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numeric(_) | Error::Convergence { .. } | Error::DegenerateDistribution(_) => {
                ErrorKind::Numeric
            }
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numeric,
    Io,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
