use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corpus contains no valid records ({skipped} skipped)")]
    EmptyCorpus { skipped: usize },

    #[error("provider unavailable: {message}")]
    ProviderUnavailable {
        message: String,
        /// Ids of the inputs whose request failed, when known.
        failed_ids: Vec<String>,
    },

    #[error("incompatible snapshot: {0}")]
    IncompatibleSnapshot(String),

    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),

    #[error("no sentence passes the active filter")]
    EmptyContext,

    #[error("no topic selected for corpus question")]
    NoRoute,

    #[error("not found: {0}")]
    NotFound(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
