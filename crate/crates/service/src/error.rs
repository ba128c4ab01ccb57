use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use modq_core::Error as CoreError;

/// An error response; like every other response it names the model version.
#[derive(Debug, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub model_version: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>, model_version: &str) -> Self {
        Self {
            status,
            message: message.into(),
            model_version: model_version.to_string(),
        }
    }

    pub fn from_core(e: CoreError, model_version: &str) -> Self {
        let status = match &e {
            CoreError::UnknownArticle(_) | CoreError::UnknownComment(_) | CoreError::NoPicks => StatusCode::NOT_FOUND,
            CoreError::SchemaMismatch(_) | CoreError::MissingEmbedding(_) => StatusCode::CONFLICT,
            CoreError::EmptyArticle(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("request failed: {e}");
        }
        Self::new(status, e.to_string(), model_version)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "model_version": self.model_version });
        (self.status, Json(body)).into_response()
    }
}
