use std::path::PathBuf;

use serde_json::json;
use spinlab_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for bad input, 3 when the data do not support a fit, 4 when an
    /// internal consistency check trips.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Core(e) if e.is_fit_failure() => 3,
            CliError::Core(CoreError::Consistency(_)) => 4,
            CliError::Core(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Io { .. } => "io",
            CliError::Core(CoreError::InvalidInput(_)) => "invalid_input",
            CliError::Core(CoreError::Degenerate(_)) => "degenerate_input",
            CliError::Core(CoreError::RankDeficient(_)) => "rank_deficient",
            CliError::Core(CoreError::Unidentifiable(_)) => "unidentifiable",
            CliError::Core(CoreError::NotConverged { .. }) => "not_converged",
            CliError::Core(CoreError::Singular { .. }) => "singular",
            CliError::Core(CoreError::Consistency(_)) => "consistency",
        }
    }

    /// One-line JSON form written to standard error.
    pub fn to_json(&self) -> String {
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

pub type CliResult<T> = Result<T, CliError>;
