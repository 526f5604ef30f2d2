use std::path::PathBuf;

/// Errors raised across the crate.
///
/// `Contract` marks a violated precondition on shapes or values (a caller
/// bug), `Config` a bad user-supplied setting, and `Parse` malformed input
/// data.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in feature {index}: {message}")]
    Parse { index: usize, message: String },

    #[error("malformed document: {0}")]
    Document(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Attach a file path to an error.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True when the error stems from bad input data rather than usage.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::File { source, .. } => source.is_data_error(),
            Error::Config(_) => false,
            _ => true,
        }
    }
}
