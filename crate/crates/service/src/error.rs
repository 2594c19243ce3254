use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

use crate::protocol::PROTOCOL_VERSION;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown scene {0}")]
    UnknownScene(String),
    #[error("unknown rollout {0}")]
    UnknownRollout(usize),
    #[error("task {0} already exists")]
    TaskExists(String),
    #[error("task {task} is held by session {session}")]
    TaskBusy { task: String, session: String },
    #[error("session {0} has finished")]
    SessionFinished(String),
    #[error("no anomaly is pending: {0} needs the session to be waiting for the user")]
    NoPendingAnomaly(&'static str),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownTask(_) => "unknown-task",
            ApiError::UnknownSession(_) => "unknown-session",
            ApiError::UnknownScene(_) => "unknown-scene",
            ApiError::UnknownRollout(_) => "unknown-rollout",
            ApiError::TaskExists(_) => "task-exists",
            ApiError::TaskBusy { .. } => "task-busy",
            ApiError::SessionFinished(_) => "session-finished",
            ApiError::NoPendingAnomaly(_) => "no-pending-anomaly",
            ApiError::BadRequest(_) => "bad-request",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownTask(_)
            | ApiError::UnknownSession(_)
            | ApiError::UnknownScene(_)
            | ApiError::UnknownRollout(_) => StatusCode::NOT_FOUND,
            ApiError::TaskExists(_)
            | ApiError::TaskBusy { .. }
            | ApiError::SessionFinished(_)
            | ApiError::NoPendingAnomaly(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "version": PROTOCOL_VERSION, "code": self.code(), "message": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
