use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An aggregation was asked for cells that are not in the results.
    #[error("incomplete results, missing: {}", .0.join("; "))]
    MissingCells(Vec<String>),

    #[error("malformed results file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn contract(message: impl Into<String>) -> Self {
        SimError::Contract(message.into())
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
