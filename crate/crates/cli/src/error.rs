use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] wwrt_core::Error),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Schema(String),

    #[error("sampler did not converge: max scalar R-hat {rhat:.4} exceeds {threshold}")]
    NonConvergence { rhat: f64, threshold: f64 },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success; 1 I/O; 2 schema; 3 non-convergence; 4 optimizer failure.
    pub fn exit_code(&self) -> u8 {
        use wwrt_core::Error as E;
        match self {
            CliError::Io { .. } => 1,
            CliError::Config { .. } | CliError::Schema(_) => 2,
            CliError::NonConvergence { .. } => 3,
            CliError::Core(e) => match e {
                E::Io { .. } => 1,
                E::NotConverged { .. } => 4,
                E::Initialization(_) => 3,
                _ => 2,
            },
        }
    }
}
