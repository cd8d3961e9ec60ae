//! `/ipfs/<cid>` over the serving node.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use farmledger::{Cid, SimError};

use crate::{ApiError, Host};

pub const CONTENT_CID_HEADER: &str = "x-content-cid";

pub fn router(host: Arc<Host>) -> Router {
    Router::new()
        .route("/ipfs/:cid", get(resolve))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(host)
}

/// `application/json` when the bytes parse as JSON.
pub fn media_type(bytes: &[u8]) -> &'static str {
    if serde_json::from_slice::<serde::de::IgnoredAny>(bytes).is_ok() {
        "application/json"
    } else {
        "application/octet-stream"
    }
}

async fn resolve(State(host): State<Arc<Host>>, Path(text): Path<String>) -> Response {
    let cid: Cid = match text.parse() {
        Ok(c) => c,
        Err(e) => {
            return ApiError::bad_request(format!("invalid cid {text:?}: {e}")).into_response()
        }
    };
    match host.resolve(cid).await {
        Ok(bytes) => {
            let mut resp = (
                StatusCode::OK,
                [(header::CONTENT_TYPE, media_type(&bytes))],
                bytes,
            )
                .into_response();
            resp.headers_mut().insert(
                CONTENT_CID_HEADER,
                HeaderValue::from_str(&cid.to_string()).expect("cid is ascii"),
            );
            resp
        }
        Err(SimError::NotFoundAnywhere(_)) => ApiError::new(
            StatusCode::NOT_FOUND,
            format!("{cid} not found on the network"),
        )
        .into_response(),
        Err(e) => ApiError::from(e).into_response(),
    }
}
