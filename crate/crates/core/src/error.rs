use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("bit length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("record has no encodable QID value")]
    Unencodable,

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error in step `{step}`: {message}")]
    Protocol { step: &'static str, message: String },

    #[error("step `{step}` failed: {source}")]
    Step {
        step: &'static str,
        source: Box<Error>,
    },

    #[error("malformed message: {0}")]
    Decode(String),

    #[error("data generation error: {0}")]
    Generation(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn protocol(step: &'static str, message: impl Into<String>) -> Self {
        Error::Protocol {
            step,
            message: message.into(),
        }
    }
}
