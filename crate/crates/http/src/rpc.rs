//! Node RPC API under `/api/v0`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use farmledger::analytics::{
    summary, yield_over_time, yield_vs_resource, Bucket, Filter, GroupBy, Resource,
};
use farmledger::dag::MAX_OBJECT_SIZE;
use farmledger::farm::{parse_date, FarmType};
use farmledger::{parse_csv, upload_dataset, Cid, Dataset};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{ApiError, Host};

pub fn router(host: Arc<Host>) -> Router {
    Router::new()
        .route("/api/v0/add", post(add))
        .route("/api/v0/cat", get(cat).post(cat))
        .route("/api/v0/pin/add", post(pin_add))
        .route("/api/v0/pin/rm", post(pin_rm))
        .route("/api/v0/id", get(id).post(id))
        .route("/api/v0/farm/upload", post(farm_upload))
        .route("/api/v0/farm/analyze", get(farm_analyze))
        .layer(DefaultBodyLimit::max(MAX_OBJECT_SIZE + 1))
        .with_state(host)
}

fn arg_cid(q: &HashMap<String, String>, name: &str) -> Result<Cid, ApiError> {
    let text = q
        .get(name)
        .ok_or_else(|| ApiError::bad_request(format!("missing query parameter {name:?}")))?;
    text.parse()
        .map_err(|e| ApiError::bad_request(format!("invalid cid {text:?}: {e}")))
}

async fn add(State(host): State<Arc<Host>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let size = body.len();
    let cid = host.with_sim(move |sim, node| sim.add(node, &body)).await?;
    Ok(Json(json!({ "cid": cid.to_string(), "size": size })))
}

async fn cat(
    State(host): State<Arc<Host>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let cid = arg_cid(&q, "arg")?;
    let bytes = host.resolve(cid).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn pin_add(
    State(host): State<Arc<Host>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Value>, ApiError> {
    let cid = arg_cid(&q, "arg")?;
    let deadline = host
        .config
        .resolve_timeout
        .max(host.config.attempt_deadline);
    host.with_sim(move |sim, node| sim.pin(node, &cid, deadline))
        .await?;
    Ok(Json(json!({ "pinned": [cid.to_string()] })))
}

async fn pin_rm(
    State(host): State<Arc<Host>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Value>, ApiError> {
    let cid = arg_cid(&q, "arg")?;
    host.with_sim(move |sim, node| sim.unpin(node, &cid)).await;
    Ok(Json(json!({ "unpinned": [cid.to_string()] })))
}

async fn id(State(host): State<Arc<Host>>) -> Json<Value> {
    let addr = host.advertised_addr();
    Json(json!({ "peer_id": addr.peer.to_string(), "multiaddr": addr.to_string() }))
}

async fn farm_upload(
    State(host): State<Arc<Host>>,
    Query(q): Query<HashMap<String, String>>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "CSV must be UTF-8"))?;
    let ds = parse_csv(text)?;
    let base = q
        .get("visualizer_base")
        .cloned()
        .unwrap_or_else(|| host.config.visualizer_base.clone());
    let receipt = host
        .with_sim(move |sim, node| upload_dataset(&ds, sim, node, &base))
        .await
        .map_err(|e| match e {
            farmledger::farm::UploadError::Sim(e) => ApiError::from(e),
            farmledger::farm::UploadError::Farm(e) => ApiError::from(e),
        })?;
    Ok(Json(receipt.to_json()))
}

#[derive(Debug, Deserialize)]
struct AnalyzeQuery {
    cid: String,
    chart: Option<String>,
    resource: Option<String>,
    group_by: Option<String>,
    bucket: Option<String>,
    product_type: Option<String>,
    location: Option<String>,
    farm_type: Option<String>,
    date_from: Option<String>,
    date_to: Option<String>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(
    name: &str,
    value: Option<&str>,
    default: &str,
) -> Result<T, ApiError> {
    let v = value.unwrap_or(default);
    serde_json::from_value(Value::String(v.to_string()))
        .map_err(|_| ApiError::bad_request(format!("invalid {name} {v:?}")))
}

fn filter_of(q: &AnalyzeQuery) -> Result<Filter, ApiError> {
    let farm_type = match q.farm_type.as_deref() {
        None | Some("") => None,
        Some(t) => Some(
            FarmType::parse(t)
                .ok_or_else(|| ApiError::bad_request(format!("invalid farm_type {t:?}")))?,
        ),
    };
    let date = |s: &Option<String>| -> Result<Option<chrono::NaiveDate>, ApiError> {
        match s.as_deref() {
            None | Some("") => Ok(None),
            Some(d) => parse_date(d)
                .map(Some)
                .ok_or_else(|| ApiError::bad_request(format!("invalid date {d:?}"))),
        }
    };
    let date_range = match (date(&q.date_from)?, date(&q.date_to)?) {
        (None, None) => None,
        (a, b) => Some((
            a.unwrap_or(chrono::NaiveDate::MIN),
            b.unwrap_or(chrono::NaiveDate::MAX),
        )),
    };
    let nonempty = |s: &Option<String>| s.clone().filter(|v| !v.is_empty());
    Ok(Filter {
        product_type: nonempty(&q.product_type),
        location: nonempty(&q.location),
        farm_type,
        date_range,
    })
}

/// Chart data for a stored dataset.
fn analyze(ds: &Dataset, q: &AnalyzeQuery) -> Result<Value, ApiError> {
    let f = filter_of(q)?;
    let totals = summary(ds, &f);
    match q.chart.as_deref().unwrap_or("timeseries") {
        "timeseries" => {
            let bucket: Bucket = parse_enum("bucket", q.bucket.as_deref(), "month")?;
            let series = yield_over_time(ds, &f, bucket);
            Ok(
                json!({ "chart": "timeseries", "bucket": bucket, "series": series.points, "summary": totals }),
            )
        }
        "scatter" => {
            let resource: Resource = parse_enum("resource", q.resource.as_deref(), "water_l")?;
            let group_by: GroupBy = parse_enum("group_by", q.group_by.as_deref(), "product_type")?;
            let scatter = yield_vs_resource(ds, &f, resource, group_by);
            Ok(json!({
                "chart": "scatter",
                "resource": resource,
                "group_by": group_by,
                "groups": scatter.groups,
                "summary": totals,
            }))
        }
        other => Err(ApiError::bad_request(format!("invalid chart {other:?}"))),
    }
}

async fn farm_analyze(
    State(host): State<Arc<Host>>,
    Query(q): Query<AnalyzeQuery>,
) -> Result<Json<Value>, ApiError> {
    let cid: Cid = q
        .cid
        .parse()
        .map_err(|e| ApiError::bad_request(format!("invalid cid {:?}: {e}", q.cid)))?;
    filter_of(&q)?;
    let bytes = host.resolve(cid).await?;
    let ds = Dataset::from_canonical(&bytes)?;
    Ok(Json(analyze(&ds, &q)?))
}
