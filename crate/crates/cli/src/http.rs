//! HTTP front end. Engine calls run on the blocking pool because the
//! model gateway uses a blocking client underneath.

use std::net::Ipv4Addr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use lightmem_core::engine::MemoryEngine;
use lightmem_core::Error;

use crate::build_engine;

const PAGE_LIMIT_DEFAULT: usize = 50;
const PAGE_LIMIT_MAX: usize = 500;

pub fn serve(port: u16, config: Option<&Path>, state: Option<&Path>) -> anyhow::Result<()> {
    let engine = Arc::new(build_engine(config, state)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let app = router(engine.clone());
        let listener = tokio::net::TcpListener::bind((Ipv4Addr::LOCALHOST, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    if let Some(dir) = state {
        engine.snapshot(dir)?;
        println!("state saved to {}", dir.display());
    }
    Ok(())
}

fn router(engine: Arc<MemoryEngine>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/consolidate", post(consolidate))
        .route("/v1/memory/{user_id}/mtm", get(memory_page))
        .route("/v1/ltm/stats", get(ltm_stats))
        .route("/v1/metrics/latency", get(latency_metrics))
        .with_state(engine)
}

#[derive(Deserialize)]
struct QueryBody {
    user_id: String,
    text: String,
}

#[derive(Deserialize)]
struct PageParams {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn query(State(engine): State<Arc<MemoryEngine>>, Json(body): Json<QueryBody>) -> Response {
    run_blocking(move || engine.handle_query(&body.user_id, &body.text)).await
}

async fn consolidate(State(engine): State<Arc<MemoryEngine>>) -> Response {
    run_blocking(move || engine.consolidate()).await
}

async fn memory_page(
    State(engine): State<Arc<MemoryEngine>>,
    UrlPath(user_id): UrlPath<String>,
    Query(page): Query<PageParams>,
) -> Response {
    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(PAGE_LIMIT_DEFAULT).min(PAGE_LIMIT_MAX);
    Json(engine.list_mtm(&user_id, offset, limit)).into_response()
}

async fn ltm_stats(State(engine): State<Arc<MemoryEngine>>) -> Response {
    Json(engine.ltm_stats()).into_response()
}

async fn latency_metrics(State(engine): State<Arc<MemoryEngine>>) -> Response {
    Json(engine.latency_report()).into_response()
}

async fn run_blocking<T, F>(task: F) -> Response
where
    T: serde::Serialize + Send + 'static,
    F: FnOnce() -> lightmem_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(task).await {
        Ok(Ok(value)) => Json(value).into_response(),
        Ok(Err(err)) => error_response(&err),
        Err(join_error) => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": {"code": "worker_panic", "detail": join_error.to_string()}})),
        )
            .into_response(),
    }
}

fn error_response(err: &Error) -> Response {
    let (status, code) = classify(err);
    (
        status,
        Json(json!({"error": {"code": code, "detail": err.to_string()}})),
    )
        .into_response()
}

// Backend faults map to 502 so operators can tell the model endpoint's
// failures from ours; a bad request stays the caller's problem.
fn classify(err: &Error) -> (StatusCode, &'static str) {
    match err {
        Error::EmptyText => (StatusCode::BAD_REQUEST, "empty_text"),
        Error::Endpoint { .. } => (StatusCode::BAD_GATEWAY, "endpoint_failure"),
        Error::FixtureExhausted { .. } => (StatusCode::BAD_GATEWAY, "fixture_exhausted"),
        Error::InvalidPlan(_) | Error::InvalidTimeWindow { .. } => {
            (StatusCode::INTERNAL_SERVER_ERROR, "planner")
        }
        Error::Config(_) => (StatusCode::INTERNAL_SERVER_ERROR, "config"),
        Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "serialization"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}
