use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] repro_logit::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("{0}")]
    Invalid(String),
    #[error("empty report")]
    EmptyReport,
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 3 for IO failures, 2 for everything the user can fix in the input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
