use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{0}")]
    Validation(String),

    #[error("session `{0}` not found")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("event store: {0}")]
    Store(#[from] std::io::Error),

    #[error("corrupt event log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

impl From<nscore::Error> for SessionError {
    fn from(e: nscore::Error) -> Self {
        SessionError::Validation(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SessionError>;
