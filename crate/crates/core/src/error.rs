use thiserror::Error;

/// Errors raised by the sequential-testing toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid score bounds [{lower}, {upper}]: need finite lower < upper")]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("score {value} outside [{lower}, {upper}]{}", trial_suffix(*.trial))]
    OutOfRange {
        trial: Option<u64>,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("malformed log for policy `{policy}`: {reason}")]
    MalformedLog { policy: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("test already finished at trial {n}")]
    Finished { n: u64 },

    #[error("out-of-order trial: expected index {expected}, got {got}")]
    Ordering { expected: u64, got: u64 },

    #[error("betting coefficient {0} outside [0, 1)")]
    Domain(f64),

    #[error("csv error on line {line}: {reason}")]
    Csv { line: u64, reason: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("generation failed: {0}")]
    Generation(String),
}

fn trial_suffix(trial: Option<u64>) -> String {
    match trial {
        Some(t) => format!(" at trial {t}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
