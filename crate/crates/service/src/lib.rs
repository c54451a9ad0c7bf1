//! HTTP API over curation sessions.
//!
//! Every error response is `{code, message, detail}`. CPU-bound work
//! (session creation, mutations, agent calls) runs on the blocking pool.

mod error;
mod store;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use colmatch_core::session::{CandidateFilter, Page};
use colmatch_core::{Action, Candidate, CandidateStatus};
use serde_json::json;

pub use error::ApiError;
pub use store::{
    dataset_name, AgentFactory, Created, SessionHandle, SessionStore, StoreConfig, Upload, DEFAULT_MAX_ATTRIBUTES,
    DEFAULT_MAX_UPLOAD_BYTES,
};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

type ApiResult<T> = Result<T, ApiError>;

pub fn router(store: Arc<SessionStore>) -> Router {
    // Room for three maximal fields plus multipart framing; the per-field
    // limit is enforced while reading.
    let body_limit = store.config().max_upload_bytes.saturating_mul(3).saturating_add(1 << 20);
    Router::new()
        .route("/", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/candidates", get(list_candidates))
        .route("/sessions/{id}/candidates/{source}/{target}", get(candidate_detail))
        .route("/sessions/{id}/actions", post(mutate))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/clusters", get(clusters))
        .route("/sessions/{id}/export", get(export))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(store)
}

/// Serves `router(store)` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<SessionStore>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

async fn health(State(store): State<Arc<SessionStore>>) -> Json<serde_json::Value> {
    Json(json!({
        "name": "colmatch",
        "version": VERSION,
        "status": "ok",
        "sessions": store.len(),
    }))
}

async fn list_sessions(State(store): State<Arc<SessionStore>>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": store.ids() }))
}

fn multipart_error(e: MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large("PayloadTooLarge", e.body_text())
    } else {
        ApiError::bad_request("BadMultipart", e.body_text())
    }
}

async fn create_session(State(store): State<Arc<SessionStore>>, mut multipart: Multipart) -> ApiResult<Response> {
    let limit = store.config().max_upload_bytes;
    let mut source = None;
    let mut target = None;
    let mut config = None;
    while let Some(mut field) = multipart.next_field().await.map_err(multipart_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let mut bytes = Vec::new();
        while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
            if bytes.len() + chunk.len() > limit {
                return Err(ApiError::too_large(
                    "PayloadTooLarge",
                    format!("field `{name}` exceeds the {limit}-byte upload limit"),
                )
                .with_detail(json!({ "field": name, "limit": limit })));
            }
            bytes.extend_from_slice(&chunk);
        }
        match name.as_str() {
            "source" => source = Some(Upload::new(file_name.as_deref(), "source", bytes)),
            "target" => target = Some(Upload::new(file_name.as_deref(), "target", bytes)),
            "config" => {
                let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| {
                    ApiError::bad_request("InvalidConfig", format!("config is not valid JSON: {e}"))
                        .with_detail(json!({ "reason": e.to_string() }))
                })?;
                config = Some(value);
            }
            other => {
                return Err(ApiError::bad_request("UnknownField", format!("unexpected form field `{other}`"))
                    .with_detail(json!({ "field": other })))
            }
        }
    }
    let missing = |f: &str| ApiError::bad_request("MissingField", format!("form field `{f}` is required")).with_detail(json!({ "field": f }));
    let source = source.ok_or_else(|| missing("source"))?;
    let target = target.ok_or_else(|| missing("target"))?;
    let created = blocking(move || store.create(source, target, config.as_ref())).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn import_session(State(store): State<Arc<SessionStore>>, body: Bytes) -> ApiResult<Response> {
    let created = blocking(move || store.import(&body)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let summary = store.read(&id, |s| s.summary())?;
    Ok(Json(json!({ "id": id, "summary": summary })).into_response())
}

fn parse_filter(params: &[(String, String)]) -> ApiResult<(CandidateFilter, usize, usize)> {
    let mut filter = CandidateFilter::default();
    let mut page = 1;
    let mut page_size = DEFAULT_PAGE_SIZE;
    let bad = |key: &str, value: &str, why: &str| {
        ApiError::bad_request("BadFilter", format!("invalid `{key}`: {why}")).with_detail(json!({ "parameter": key, "value": value }))
    };
    for (key, value) in params {
        match key.as_str() {
            "min_score" => {
                let x: f64 = value.parse().map_err(|_| bad(key, value, "expected a number"))?;
                if !x.is_finite() {
                    return Err(bad(key, value, "expected a finite number"));
                }
                filter.min_score = Some(x);
            }
            "supercategory" => filter.supercategory = Some(value.clone()),
            "category" => filter.category = Some(value.clone()),
            "cluster" => filter.cluster = Some(value.parse().map_err(|_| bad(key, value, "expected a cluster index"))?),
            "status" => {
                filter.status = Some(CandidateStatus::parse(value).ok_or_else(|| bad(key, value, "unknown status"))?)
            }
            "query" => filter.query = Some(value.clone()),
            "page" => page = value.parse().ok().filter(|p| *p >= 1).ok_or_else(|| bad(key, value, "expected an integer >= 1"))?,
            "page_size" => {
                page_size = value.parse().ok().filter(|p| *p >= 1).ok_or_else(|| bad(key, value, "expected an integer >= 1"))?
            }
            _ => return Err(bad(key, value, "unknown parameter")),
        }
    }
    Ok((filter, page, page_size))
}

async fn list_candidates(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    params: Result<Query<Vec<(String, String)>>, QueryRejection>,
) -> ApiResult<Json<Page<Candidate>>> {
    let Query(params) = params.map_err(|e| ApiError::bad_request("BadFilter", e.body_text()))?;
    let (filter, page, page_size) = parse_filter(&params)?;
    let page = store.read(&id, |s| s.list_candidates(&filter, page, page_size))??;
    Ok(Json(page))
}

async fn candidate_detail(
    State(store): State<Arc<SessionStore>>,
    Path((id, source, target)): Path<(String, String, String)>,
) -> ApiResult<Response> {
    let detail = blocking(move || store.detail(&id, &source, &target)).await?;
    Ok(Json(detail).into_response())
}

async fn mutate(State(store): State<Arc<SessionStore>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let action: Action = serde_json::from_slice(&body).map_err(|e| {
        ApiError::bad_request("InvalidAction", format!("cannot parse action: {e}")).with_detail(json!({ "reason": e.to_string() }))
    })?;
    store.get(&id)?;
    let outcome = blocking(move || store.apply(&id, action)).await?;
    Ok(Json(outcome).into_response())
}

async fn timeline(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let timeline = store.read(&id, |s| s.timeline().clone())?;
    Ok(Json(timeline).into_response())
}

async fn clusters(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    let clusters = store.read(&id, |s| s.clusters().clone())?;
    Ok(Json(clusters).into_response())
}

async fn export(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    params: Result<Query<BTreeMap<String, String>>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(params) = params.map_err(|e| ApiError::bad_request("BadQuery", e.body_text()))?;
    let format = params.get("format").map(String::as_str).unwrap_or("csv");
    match format {
        "csv" => {
            let body = store.read(&id, |s| s.export_csv())?;
            Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
        }
        "json" => {
            let body = store.read(&id, |s| s.export_json())?;
            Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
        }
        other => Err(ApiError::bad_request("UnknownFormat", format!("unknown export format `{other}`"))
            .with_detail(json!({ "format": other, "supported": ["csv", "json"] }))),
    }
}
