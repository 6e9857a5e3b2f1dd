use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The file parsed but does not follow the documented schema.
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    /// An object violated one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch for {what}: expected {expected}, found {found}")]
    Shape {
        what: String,
        expected: String,
        found: String,
    },

    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f32 },

    #[error("zero-norm {which} row {row}: cosine similarity is undefined")]
    ZeroNorm { which: &'static str, row: usize },

    #[error("empty span")]
    EmptySpan,

    #[error("span index {index} outside response of length {len}")]
    SpanOutOfRange { index: usize, len: usize },

    /// A response token could not be mapped onto any parser word.
    #[error("token {token} (chars {start}..{end}) is not covered by any word of the parse")]
    Misaligned {
        token: usize,
        start: usize,
        end: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
