//! Remote pinning endpoints. Every `/pinning` route needs
//! `Authorization: Bearer <jwt>`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{ConnectInfo, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use farmledger::{Cid, JwtError, PinError};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{ApiError, Host};

pub fn router(host: Arc<Host>) -> Router {
    Router::new()
        .route("/pinning/pinByHash", post(pin_by_hash))
        .route("/pinning/unpin/:cid", delete(unpin))
        .route("/pinning/pinList", get(pin_list))
        .route("/keys", post(keys))
        .with_state(host)
}

fn bearer(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or_else(|| ApiError::from(PinError::Auth(JwtError::MalformedToken)))
}

fn parse_cid(text: &str) -> Result<Cid, ApiError> {
    text.parse()
        .map_err(|e| ApiError::bad_request(format!("invalid cid {text:?}: {e}")))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct PinRequest {
    hash_to_pin: String,
}

async fn pin_by_hash(
    State(host): State<Arc<Host>>,
    headers: HeaderMap,
    Json(req): Json<PinRequest>,
) -> Result<Json<Value>, ApiError> {
    let token = bearer(&headers)?;
    // Authenticate before touching the cid so bad tokens learn nothing.
    host.pinsvc
        .lock()
        .verify_jwt(&token)
        .map_err(PinError::Auth)?;
    let cid = parse_cid(&req.hash_to_pin)?;
    let h = host.clone();
    let entry = tokio::task::spawn_blocking(move || {
        let deadline = h.config.resolve_timeout.max(h.config.attempt_deadline);
        let mut svc = h.pinsvc.lock();
        let mut sim = h.sim.lock();
        svc.pin_by_hash(&mut sim, &token, &cid, deadline)
    })
    .await
    .expect("pin task panicked")?;
    Ok(Json(
        json!({ "cid": entry.cid.to_string(), "status": entry.status }),
    ))
}

async fn unpin(
    State(host): State<Arc<Host>>,
    headers: HeaderMap,
    Path(text): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let token = bearer(&headers)?;
    host.pinsvc
        .lock()
        .verify_jwt(&token)
        .map_err(PinError::Auth)?;
    let cid = parse_cid(&text)?;
    let mut svc = host.pinsvc.lock();
    let mut sim = host.sim.lock();
    svc.unpin(&mut sim, &token, &cid)?;
    Ok(Json(
        json!({ "cid": cid.to_string(), "status": "unpinned" }),
    ))
}

async fn pin_list(
    State(host): State<Arc<Host>>,
    headers: HeaderMap,
) -> Result<Json<Value>, ApiError> {
    let token = bearer(&headers)?;
    let rows = host.pinsvc.lock().list_pins(&token)?;
    Ok(Json(json!({ "rows": rows })))
}

/// Issues credentials. Only answers loopback clients.
async fn keys(
    State(host): State<Arc<Host>>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    if !peer.ip().is_loopback() {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "key issuance is local only",
        ));
    }
    let iat = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let issued = host.pinsvc.lock().issue_key(iat);
    tracing::info!(api_key = %issued.credentials.api_key, "issued pinning credentials");
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "api_key": issued.credentials.api_key,
            "api_secret": issued.credentials.api_secret,
            "jwt": issued.jwt,
        })),
    ))
}
