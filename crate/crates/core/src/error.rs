use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("consistent set is empty")]
    EmptyConsistentSet,

    #[error("state posterior is degenerate (no finite log-weight)")]
    DegeneratePosterior,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy `{policy}` failed at round {round}: {source}")]
    Policy {
        policy: String,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Broad failure class, mapped onto process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) => ErrorClass::Config,
            Error::Parse { .. } | Error::EmptyData(_) | Error::Io(_) | Error::Json(_) => {
                ErrorClass::Data
            }
            Error::Dimension { .. }
            | Error::EmptyConsistentSet
            | Error::DegeneratePosterior
            | Error::Numerical(_) => ErrorClass::Numerical,
            Error::Policy { source, .. } => source.class(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
