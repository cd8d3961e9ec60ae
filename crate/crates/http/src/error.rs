use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use farmledger::{DagError, FarmError, PinError, SimError};
use serde_json::{json, Value};

/// An error response: status plus a JSON body with at least `"error"`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.to_string() }),
        }
    }

    pub fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let status = match &e {
            SimError::NotFoundAnywhere(_) => StatusCode::NOT_FOUND,
            SimError::IntegrityError { .. } => StatusCode::BAD_GATEWAY,
            SimError::Dag(DagError::TooLarge { .. }) => StatusCode::PAYLOAD_TOO_LARGE,
            SimError::Dag(DagError::NotFound(_) | DagError::MissingBlock(_)) => {
                StatusCode::NOT_FOUND
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e)
    }
}

impl From<FarmError> for ApiError {
    fn from(e: FarmError) -> Self {
        let body = match &e {
            FarmError::HeaderMismatch { expected, found } => json!({
                "error": "HeaderMismatch",
                "message": e.to_string(),
                "expected": expected,
                "found": found,
            }),
            FarmError::RowError {
                line,
                field,
                reason,
            } => json!({
                "error": "RowError",
                "message": e.to_string(),
                "line": line,
                "field": field,
                "reason": reason,
            }),
            FarmError::NotCanonical(reason) => {
                json!({ "error": "NotCanonical", "message": reason })
            }
            FarmError::Qr(reason) => json!({ "error": "Qr", "message": reason }),
        };
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body,
        }
    }
}

impl From<PinError> for ApiError {
    fn from(e: PinError) -> Self {
        let status = match &e {
            PinError::Auth(_) => StatusCode::UNAUTHORIZED,
            PinError::NotOwner(_) => StatusCode::FORBIDDEN,
            PinError::NotPinned(_) => StatusCode::NOT_FOUND,
            PinError::Fetch(inner) => return ApiError::from(inner.clone()),
        };
        ApiError::new(status, e)
    }
}
