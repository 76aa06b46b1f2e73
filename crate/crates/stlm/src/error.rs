use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StlmError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Core(#[from] stlm_core::Error),
    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, StlmError>;

impl StlmError {
    /// Process exit status: 1 usage/config, 2 numeric failure, 3 failed check.
    pub fn exit_code(&self) -> i32 {
        use stlm_core::Error as E;
        match self {
            StlmError::Core(E::NonFinite { .. } | E::NonFiniteLoss { .. } | E::NonFiniteGradient(_)) => 2,
            StlmError::CheckFailed(_) => 3,
            _ => 1,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        StlmError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| StlmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
