use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{what} not found: {name}")]
    NotFound { what: &'static str, name: String },

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not_found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Validation(_) => "validation",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn detail(&self) -> serde_json::Value {
        match self {
            ServiceError::NotFound { what, name } => serde_json::json!({ "kind": what, "name": name }),
            _ => serde_json::Value::Null,
        }
    }
}

impl From<maint_core::ModelError> for ServiceError {
    fn from(e: maint_core::ModelError) -> Self {
        use maint_core::ModelError as M;
        match e {
            M::InvalidAction { .. } | M::InvalidArgument(_) | M::NonFinite(_) => ServiceError::Validation(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<maint_rl::RlError> for ServiceError {
    fn from(e: maint_rl::RlError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

/// Error response body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub code: String,
    pub message: String,
    pub detail: serde_json::Value,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            code: self.code().into(),
            message: self.to_string(),
            detail: self.detail(),
        };
        (self.status(), Json(body)).into_response()
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
