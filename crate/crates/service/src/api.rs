//! JSON-over-HTTP front end for [`Store`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use corefkit::annotation::Clustering;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::store::{ReportKind, ReportParams, Store};

type ApiResult<T> = Result<T, ServiceError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn authenticate(store: &Store, headers: &HeaderMap) -> ApiResult<String> {
    store.authenticate(bearer(headers).ok_or(ServiceError::Unauthorized)?)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

/// Runs a store mutation off the async executor.
async fn blocking<T, F>(store: &Arc<Store>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> ApiResult<T> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ServiceError::Corrupt(format!("worker panicked: {e}")))?
}

#[derive(Debug, Default, Deserialize)]
pub struct RegisterRequest {
    #[serde(default)]
    pub annotator_id: Option<String>,
}

/// Body for tutorial steps and annotation submissions.
#[derive(Debug, Deserialize, Serialize)]
pub struct ClustersRequest {
    #[serde(default)]
    pub passage_id: String,
    #[serde(default)]
    pub annotator_id: String,
    pub clusters: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
pub struct ReportQuery {
    pub kind: String,
    #[serde(default)]
    pub tau: Option<u32>,
    #[serde(default)]
    pub singletons: Option<String>,
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn register(
    State(store): State<Arc<Store>>,
    payload: Option<Json<RegisterRequest>>,
) -> ApiResult<impl IntoResponse> {
    let req = payload.map(|Json(r)| r).unwrap_or_default();
    let reg = blocking(&store, move |s| s.register(req.annotator_id)).await?;
    Ok((StatusCode::CREATED, Json(reg)))
}

async fn tutorial(State(store): State<Arc<Store>>) -> impl IntoResponse {
    Json(store.tutorial().public_view())
}

async fn tutorial_step(
    State(store): State<Arc<Store>>,
    Path(step): Path<usize>,
    headers: HeaderMap,
    payload: Result<Json<ClustersRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let annotator = authenticate(&store, &headers)?;
    let req = body(payload)?;
    let submission = Clustering::new(format!("tutorial-{step}"), annotator.clone(), req.clusters);
    let outcome = blocking(&store, move |s| s.tutorial_step(&annotator, step, submission)).await?;
    Ok(Json(outcome))
}

async fn next_assignment(State(store): State<Arc<Store>>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    let annotator = authenticate(&store, &headers)?;
    let assignment = blocking(&store, move |s| s.assign_next(&annotator)).await?;
    Ok(Json(json!({ "assignment": assignment })))
}

async fn passage(
    State(store): State<Arc<Store>>,
    Path(passage_id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<impl IntoResponse> {
    let annotator = authenticate(&store, &headers)?;
    Ok(Json(store.passage_view(&passage_id, Some(&annotator))?))
}

async fn submit(
    State(store): State<Arc<Store>>,
    headers: HeaderMap,
    payload: Result<Json<ClustersRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let annotator = authenticate(&store, &headers)?;
    let req = body(payload)?;
    let clustering = Clustering::new(req.passage_id, req.annotator_id, req.clusters);
    let ack = blocking(&store, move |s| s.submit(&annotator, clustering)).await?;
    Ok(Json(ack))
}

async fn report(
    State(store): State<Arc<Store>>,
    headers: HeaderMap,
    Query(q): Query<ReportQuery>,
) -> ApiResult<impl IntoResponse> {
    if !store.is_admin(bearer(&headers)) {
        return Err(ServiceError::Unauthorized);
    }
    let kind: ReportKind = q.kind.parse()?;
    let singletons = q
        .singletons
        .as_deref()
        .map(str::parse)
        .transpose()
        .map_err(ServiceError::BadRequest)?;
    let params = ReportParams { tau: q.tau, singletons };
    let value = blocking(&store, move |s| s.report(kind, &params)).await?;
    Ok(Json((*value).clone()))
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound("route".into())
}

/// Builds the API router. When `ui_dir` is given, unmatched non-API paths
/// serve static files from it.
pub fn router(store: Arc<Store>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/annotators", post(register))
        .route("/api/tutorial", get(tutorial))
        .route("/api/tutorial/steps/{step}", post(tutorial_step))
        .route("/api/assignments/next", get(next_assignment))
        .route("/api/passages/{passage_id}", get(passage))
        .route("/api/annotations", post(submit))
        .route("/api/admin/reports", get(report))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

/// Serves the API until the process is stopped.
pub async fn serve(store: Arc<Store>, addr: std::net::SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, ui_dir)).await
}
