//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("node {node} ({op}) is not differentiable; masks are constants in backward")]
    NonDifferentiable { node: usize, op: &'static str },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty valid set: {0}")]
    EmptyValidSet(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png: {0}")]
    PngDecode(String),

    #[error("png: {0}")]
    PngEncode(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::PngDecode(e.to_string())
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::PngEncode(e.to_string())
    }
}
