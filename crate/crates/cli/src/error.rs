use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Validation(#[source] mdr_core::Error),
    #[error("solver failed: {0}")]
    Solver(#[source] mdr_core::Error),
    #[error("{0}")]
    Mismatch(String),
    #[error("self-test failed: {0}")]
    SelfTest(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Self::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: strip_position(&err.to_string()),
        }
    }

    /// Sorts a core error into validation or solver failure.
    pub fn from_core(err: mdr_core::Error) -> Self {
        if err.is_validation() {
            Self::Validation(err)
        } else {
            Self::Solver(err)
        }
    }

    /// 1 for bad input, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(_) | Self::SelfTest(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_owned(),
        None => msg.to_owned(),
    }
}
