use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor was constructed or combined with inconsistent dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numeric argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation was invoked outside its stated domain (e.g. wrong
    /// sampler case, mismatched decomposition depth).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Binary tensor file is corrupt or not in the expected format.
    #[error("tensor format error: {0}")]
    Format(String),

    /// Malformed JSON input; carries the 1-based line number for line-oriented
    /// files.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A clip plan or prediction referenced a video absent from the metadata.
    #[error("unknown video id: {0}")]
    UnknownVideo(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
