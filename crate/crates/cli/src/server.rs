//! HTTP service over a loaded [`Engine`].

use std::sync::Arc;

use attrgraph::{Engine, EngineError, Method, Query, Ranker};
use axum::extract::{Path, Query as QueryParams, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Deserialize)]
pub struct SimilarParams {
    pub query_id: String,
    pub k: Option<usize>,
    pub ranker: Option<String>,
    pub method: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn engine_error(e: EngineError) -> Response {
    match e {
        EngineError::NotFound(_) => error(StatusCode::NOT_FOUND, e.to_string()),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
    }
}

async fn healthz(State(engine): State<Arc<Engine>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "products": engine.products().len(),
        "graph_edges": engine.graph().edge_count(),
    }))
}

async fn similar(State(engine): State<Arc<Engine>>, QueryParams(p): QueryParams<SimilarParams>) -> Response {
    let ranker = match p.ranker.as_deref().map(str::parse::<Ranker>).transpose() {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let method = match p.method.as_deref().map(str::parse::<Method>).transpose() {
        Ok(m) => m,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if p.k == Some(0) {
        return error(StatusCode::BAD_REQUEST, "k must be at least 1");
    }
    let query = Query {
        query_id: p.query_id,
        k: p.k,
        ranker,
        method,
    };
    match tokio::task::spawn_blocking(move || engine.similar(&query)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => engine_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn attributes(State(engine): State<Arc<Engine>>, Path(id): Path<String>) -> Response {
    match tokio::task::spawn_blocking(move || engine.attributes(&id)).await {
        Ok(Ok(set)) => Json(&*set).into_response(),
        Ok(Err(e)) => engine_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/similar", get(similar))
        .route("/v1/product/{id}/attributes", get(attributes))
        .with_state(engine)
}

/// Serves until the process is stopped.
pub fn serve(engine: Engine, addr: &str) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(engine))).await
    })
}
