use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use atlas_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    EmptyResult,
    ProviderUnavailable,
    SnapshotCorrupt,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::EmptyResult => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ProviderUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::SnapshotCorrupt => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), detail: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::BadRequest, message)
    }

    pub fn loading() -> Self {
        ApiError::new(ErrorCode::ProviderUnavailable, "snapshot is still loading; retry shortly")
    }

    /// Maps an engine error to its API code. With `expose_detail` off,
    /// internal messages (which may name files) stay out of the response.
    pub fn from_engine(err: &Error, expose_detail: bool) -> Self {
        let (code, message) = match err {
            Error::InvalidArgument(m) => (ErrorCode::BadRequest, m.clone()),
            Error::Json(e) => (ErrorCode::BadRequest, format!("malformed JSON: {e}")),
            Error::NotFound(m) => (ErrorCode::NotFound, format!("{m} not found")),
            Error::EmptyContext => (
                ErrorCode::EmptyResult,
                "no sentences match the current filter; widen the date range or clear the topic selection".into(),
            ),
            Error::NoRoute => (ErrorCode::EmptyResult, "no topic matched the question; select topics explicitly".into()),
            Error::EmptyCorpus { .. } => (ErrorCode::EmptyResult, "the corpus has no valid documents".into()),
            Error::ProviderUnavailable { .. } => (ErrorCode::ProviderUnavailable, "a model provider is unavailable".into()),
            Error::IncompatibleSnapshot(_) | Error::CorruptSnapshot(_) | Error::Io(_) => {
                (ErrorCode::SnapshotCorrupt, "the snapshot could not be read".into())
            }
        };
        let internal = matches!(
            code,
            ErrorCode::SnapshotCorrupt | ErrorCode::ProviderUnavailable
        );
        let detail = (expose_detail && internal).then(|| err.to_string());
        ApiError { code, message, detail }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}
