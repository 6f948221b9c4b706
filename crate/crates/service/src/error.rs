use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde::Serialize;
use thiserror::Error;

use calibwiz_core::calibration::CalibrationError;
use calibwiz_core::planner::PlannerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApiError {
    #[error("{0}")]
    InvalidConfig(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("{0}")]
    SchemaError(String),
    #[error("{0}")]
    DegenerateConfiguration(String),
    #[error("session has fewer than 3 usable images")]
    NotCalibrated,
    #[error("no feasible pose found in {0} evaluations")]
    NoFeasiblePose(usize),
    #[error("session is not in virtual mode")]
    NotVirtualMode,
    #[error("{0}")]
    PoseInfeasible(String),
    #[error("a newer observation superseded this request")]
    Superseded,
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: String,
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::InvalidConfig(_) => "InvalidConfig",
            ApiError::SessionNotFound(_) => "SessionNotFound",
            ApiError::SchemaError(_) => "SchemaError",
            ApiError::DegenerateConfiguration(_) => "DegenerateConfiguration",
            ApiError::NotCalibrated => "NotCalibrated",
            ApiError::NoFeasiblePose(_) => "NoFeasiblePose",
            ApiError::NotVirtualMode => "NotVirtualMode",
            ApiError::PoseInfeasible(_) => "PoseInfeasible",
            ApiError::Superseded => "Superseded",
            ApiError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::InvalidConfig(_) | ApiError::SchemaError(_) => StatusCode::BAD_REQUEST,
            ApiError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ApiError::NotCalibrated | ApiError::NotVirtualMode | ApiError::Superseded => StatusCode::CONFLICT,
            ApiError::DegenerateConfiguration(_) | ApiError::NoFeasiblePose(_) | ApiError::PoseInfeasible(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CalibrationError> for ApiError {
    fn from(e: CalibrationError) -> Self {
        match e {
            CalibrationError::DegenerateConfiguration(m) => ApiError::DegenerateConfiguration(format!(
                "{m}. Capture more views with the target clearly tilted (30 degrees or more) \
                 and placed in different parts of the image."
            )),
            CalibrationError::InvalidObservations(m) => ApiError::SchemaError(m),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<PlannerError> for ApiError {
    fn from(e: PlannerError) -> Self {
        match e {
            PlannerError::NoFeasiblePose { evaluations } => ApiError::NoFeasiblePose(evaluations),
            other => ApiError::InvalidConfig(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code(), message: self.to_string() };
        (self.status(), axum::Json(body)).into_response()
    }
}
