use thiserror::Error;

/// Input was empty or whitespace-only; none of the scores are defined on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("input is empty or whitespace-only")]
pub struct EmptyInput;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown instruction template `{0}`")]
    UnknownTemplate(String),
    #[error("failed to parse config: {0}")]
    Parse(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {reason}")]
    DataFile {
        file: String,
        line: usize,
        reason: String,
    },
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
