use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Core(#[from] phaseret_core::Error),
    #[error("{failed} of {total} records failed")]
    Records { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefixes format and core errors with the file they came from.
    pub fn context(self, path: &Path) -> Self {
        match self {
            Self::Format(m) => Self::Format(format!("{}: {m}", path.display())),
            Self::Core(e) => Self::Format(format!("{}: {e}", path.display())),
            other => other,
        }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}
