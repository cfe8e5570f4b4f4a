use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the decoding engine.
///
/// `Input` and `Io`/`Json` variants describe bad user-provided data; the rest
/// indicate a configuration that cannot be honored.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    UnknownTokenId { id: usize, vocab_size: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("enumeration of {count} sequences exceeds the limit of {limit}")]
    EnumerationTooLarge { count: f64, limit: f64 },
    #[error("non-finite objective value {value} at parameter {index}")]
    NonFinite { index: usize, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True when the error stems from user-provided data rather than a bug
    /// or an impossible request.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_)
                | Error::UnknownTokenId { .. }
                | Error::UnknownToken(_)
                | Error::Config(_)
                | Error::EnumerationTooLarge { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
