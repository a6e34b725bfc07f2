use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Core(#[from] rtinv::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{failed} of {total} acceptance criteria failed")]
    Acceptance { failed: usize, total: usize },
}

impl HarnessError {
    pub fn scenario(msg: impl Into<String>) -> Self {
        HarnessError::Scenario(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// 2 for configuration problems, 3 for numerical or I/O failures, 4 for failed acceptance.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Scenario(_) => 2,
            HarnessError::Core(rtinv::Error::Config { .. } | rtinv::Error::Json(_)) => 2,
            HarnessError::Core(_) | HarnessError::Io { .. } | HarnessError::Csv { .. } => 3,
            HarnessError::Acceptance { .. } => 4,
        }
    }
}
