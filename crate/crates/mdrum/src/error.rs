use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a file operation or a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    /// 1 usage, 2 data or schema, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) | AppError::Io { .. } => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefix the message with `context` (kind is kept).
    pub fn context(self, context: &str) -> Self {
        match self {
            AppError::Usage(m) => AppError::Usage(format!("{context}: {m}")),
            AppError::Data(m) => AppError::Data(format!("{context}: {m}")),
            AppError::Numeric(m) => AppError::Numeric(format!("{context}: {m}")),
            io => io,
        }
    }
}

impl From<mdrum_core::Error> for AppError {
    fn from(e: mdrum_core::Error) -> Self {
        use mdrum_core::Error as E;
        match e {
            E::NonFinite { .. } => AppError::Numeric(e.to_string()),
            E::Config(_) => AppError::Usage(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}
