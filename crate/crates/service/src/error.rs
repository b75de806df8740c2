use std::path::{Path, PathBuf};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use eegbench::Error as CoreError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type ServiceResult<T> = Result<T, ServiceError>;

/// Coarse classification shared by HTTP statuses and CLI exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Missing,
    Conflict,
    Validation,
    Runtime,
}

impl ServiceError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            ServiceError::BadRequest(_) => ErrorClass::Usage,
            ServiceError::NotFound(_) => ErrorClass::Missing,
            ServiceError::Conflict(_) => ErrorClass::Conflict,
            ServiceError::Io { .. } => ErrorClass::Runtime,
            ServiceError::Core(e) => match e {
                CoreError::Parameter(_) | CoreError::UnsupportedModel(_) => ErrorClass::Usage,
                CoreError::Lookup(_) => ErrorClass::Missing,
                CoreError::Format(_)
                | CoreError::Data(_)
                | CoreError::Label { .. }
                | CoreError::Compatibility(_)
                | CoreError::EmptyData(_)
                | CoreError::CorruptCheckpoint(_)
                | CoreError::Version(_)
                | CoreError::Dimension { .. }
                | CoreError::Build { .. }
                | CoreError::Json(_)
                | CoreError::Csv(_) => ErrorClass::Validation,
                _ => ErrorClass::Runtime,
            },
        }
    }

    /// 0 success, 1 usage, 2 validation, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Usage | ErrorClass::Missing => 1,
            ErrorClass::Validation => 2,
            ErrorClass::Conflict | ErrorClass::Runtime => 3,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.class() {
            ErrorClass::Usage => StatusCode::BAD_REQUEST,
            ErrorClass::Missing => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        (status, Json(json!({ "error": self.to_string(), "status": status.as_u16() }))).into_response()
    }
}
