//! Read-only JSON API over a project store, plus the static frontend.
//!
//! Every handler loads the store afresh and never writes to it. Any method
//! other than GET is answered with 405.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use stagecheck_core::{compare_runs, Project};
use tower_http::services::ServeDir;

use crate::views::step_views;

pub const SCHEMA_VERSION: u32 = 1;

const FALLBACK_INDEX: &str = include_str!("index.html");

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": message });
        (status, Json(body)).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Debug)]
struct AppState {
    store: PathBuf,
    assets: Option<PathBuf>,
}

fn envelope(key: &str, value: impl serde::Serialize) -> Json<Value> {
    let mut body = serde_json::Map::new();
    body.insert("schema_version".into(), json!(SCHEMA_VERSION));
    body.insert(key.into(), serde_json::to_value(value).expect("serializable"));
    Json(Value::Object(body))
}

/// Loads the project off the async runtime and applies `f` to it.
async fn with_project<F>(state: &AppState, f: F) -> ApiResult
where
    F: FnOnce(&Project) -> ApiResult + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || {
        let project = Project::load(&store).map_err(|e| ApiError::Internal(e.to_string()))?;
        f(&project)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn project_summary(State(state): State<Arc<AppState>>) -> ApiResult {
    with_project(&state, |p| {
        let m = p.manifest();
        Ok(envelope(
            "project",
            json!({
                "name": m.name,
                "steps": m.steps.iter().map(|s| json!({
                    "name": s.name,
                    "kind": s.kind,
                    "checks": s.checks,
                    "config": s.config,
                    "watched_sources": s.watched_sources,
                })).collect::<Vec<_>>(),
                "metric_registry": m.metric_registry,
                "data": m.data,
                "n_runs": p.all_runs().count(),
            }),
        ))
    })
    .await
}

async fn steps(State(state): State<Arc<AppState>>) -> ApiResult {
    with_project(&state, |p| Ok(envelope("steps", step_views(p)))).await
}

async fn step_runs(State(state): State<Arc<AppState>>, Path(name): Path<String>) -> ApiResult {
    with_project(&state, move |p| {
        if p.manifest().step(&name).is_none() {
            return Err(ApiError::NotFound(format!("unknown step `{name}`")));
        }
        let newest_first: Vec<_> = p.runs(&name).iter().rev().collect();
        Ok(envelope("runs", newest_first))
    })
    .await
}

async fn run(State(state): State<Arc<AppState>>, Path(run_id): Path<String>) -> ApiResult {
    with_project(&state, move |p| match p.find_run(&run_id) {
        Some(r) => Ok(envelope("run", r)),
        None => Err(ApiError::NotFound(format!("unknown run `{run_id}`"))),
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CompareQuery {
    metric: Option<String>,
    /// Comma-separated run ids; all runs when absent.
    runs: Option<String>,
}

async fn compare(State(state): State<Arc<AppState>>, Query(q): Query<CompareQuery>) -> ApiResult {
    let metric = q
        .metric
        .ok_or_else(|| ApiError::BadRequest("missing `metric` query parameter".into()))?;
    with_project(&state, move |p| {
        if p.registry().resolve(&metric).is_err() {
            return Err(ApiError::NotFound(format!("unknown metric `{metric}`")));
        }
        let selected = match q.runs.as_deref() {
            None => p.all_runs().collect::<Vec<_>>(),
            Some(list) => list
                .split(',')
                .filter(|id| !id.is_empty())
                .map(|id| {
                    p.find_run(id)
                        .ok_or_else(|| ApiError::NotFound(format!("unknown run `{id}`")))
                })
                .collect::<Result<_, _>>()?,
        };
        let ranked = compare_runs(selected, &metric, p.registry())
            .map_err(|e| ApiError::NotFound(e.to_string()))?;
        let results: Vec<Value> = ranked.into_iter().map(|(id, v)| json!([id, v])).collect();
        Ok(envelope("results", results))
    })
    .await
}

async fn index(State(state): State<Arc<AppState>>) -> Response {
    if let Some(dir) = &state.assets {
        if let Ok(html) = tokio::fs::read_to_string(dir.join("index.html")).await {
            return Html(html).into_response();
        }
    }
    Html(FALLBACK_INDEX).into_response()
}

async fn api_not_found() -> ApiError {
    ApiError::NotFound("no such endpoint".into())
}

async fn only_get(req: Request, next: Next) -> Response {
    if req.method() == Method::GET {
        return next.run(req).await;
    }
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "error": format!("{} not allowed: the dashboard is read-only", req.method()),
    });
    (
        StatusCode::METHOD_NOT_ALLOWED,
        [(header::ALLOW, "GET")],
        Json(body),
    )
        .into_response()
}

/// The full application: API routes, static files and the GET-only guard.
pub fn router(store: PathBuf, assets: Option<PathBuf>) -> Router {
    let state = Arc::new(AppState {
        store,
        assets: assets.clone(),
    });
    let mut app = Router::new()
        .route("/", get(index))
        .route("/index.html", get(index))
        .route("/api/project", get(project_summary))
        .route("/api/steps", get(steps))
        .route("/api/steps/:name/runs", get(step_runs))
        .route("/api/runs/:run_id", get(run))
        .route("/api/compare", get(compare))
        .route("/api/*rest", get(api_not_found));
    if let Some(dir) = assets {
        app = app.nest_service("/assets", ServeDir::new(dir.join("assets")));
    }
    app.with_state(state).layer(middleware::from_fn(only_get))
}

pub async fn serve(store: PathBuf, addr: String, assets: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    axum::serve(listener, router(store, assets)).await?;
    Ok(())
}
