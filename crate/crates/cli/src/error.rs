use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{}: {message}", path.display())]
    Table { path: PathBuf, message: String },

    #[error("{}", match line { Some(l) => format!("{origin}:{l}: {message}"), None => format!("{origin}: {message}") })]
    Config { origin: String, line: Option<usize>, message: String },

    #[error(transparent)]
    Core(#[from] tac_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// Process exit status: 2 for numerical failure, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(tac_core::Error::NoConvergence { .. } | tac_core::Error::TooManyFailures { .. }) => 2,
            _ => 1,
        }
    }
}
