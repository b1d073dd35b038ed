use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid segments: {0}")]
    Segments(String),
    #[error("unknown action label: {0}")]
    UnknownLabel(String),
    #[error("incomplete guidance bundle: {0}")]
    IncompleteBundle(String),
    #[error("frame {frame}: malformed verdict response {body:?}")]
    MalformedVerdict { frame: usize, body: String },
    #[error("frame {frame}: transport failure after {attempts} attempts: {message}")]
    Transport {
        frame: usize,
        attempts: u32,
        message: String,
    },
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
    #[error("no ground-truth interactive frames to judge")]
    NoInteractiveFrames,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
