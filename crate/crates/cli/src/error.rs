use std::path::{Path, PathBuf};

use methylgraph::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] methylgraph::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing {what} at {path}; run `methylgraph {producer}` first")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// 0 success, 2 validation, 3 numeric/convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Io => 4,
            },
            CliError::Config(_) => 2,
            CliError::MissingArtifact { .. } | CliError::Io { .. } => 4,
        }
    }
}

/// Errors unless `path` exists, naming the command that produces it.
pub fn require(path: &Path, what: &'static str, producer: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact { what, path: path.to_path_buf(), producer })
    }
}
