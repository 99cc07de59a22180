//! HTTP service mode: POST /ask, GET /catalog, GET /healthz, with
//! graceful drain on termination.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use omni_core::pipeline::RunMode;

use crate::config::{DynPipeline, EngineConfig};

struct AppState {
    pipeline: DynPipeline,
    default_k: usize,
    draining: AtomicBool,
}

#[derive(Deserialize)]
struct AskBody {
    question: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    mode: Option<String>,
    #[serde(default)]
    oracle_kb: Option<String>,
    #[serde(default)]
    question_id: Option<String>,
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}

async fn ask(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AskBody>, JsonRejection>,
) -> Response {
    if state.draining.load(Ordering::SeqCst) {
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "draining".into());
    }
    let Json(body) = match body {
        Ok(body) => body,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mode = match RunMode::parse(
        body.mode.as_deref().unwrap_or("omni"),
        body.k.unwrap_or(state.default_k),
    ) {
        Ok(mode) => mode,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let question_id = body.question_id.as_deref().unwrap_or("q");
    match state
        .pipeline
        .answer(question_id, &body.question, mode, body.oracle_kb.as_deref())
        .await
    {
        Ok(trace) => (StatusCode::OK, Json(trace.to_answer_json())).into_response(),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn catalog(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let sources: Vec<serde_json::Value> = state
        .pipeline
        .catalog
        .iter()
        .map(|d| {
            serde_json::json!({
                "kb_id": d.kb_id,
                "kind": d.kind.as_str(),
                "summary": d.catalog_line,
            })
        })
        .collect();
    Json(serde_json::json!({ "sources": sources }))
}

async fn healthz() -> &'static str {
    "ok"
}

async fn shutdown_signal(state: Arc<AppState>) {
    let ctrl_c = async {
        tokio::signal::ctrl_c().await.ok();
    };
    #[cfg(unix)]
    let terminate = async {
        tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("install SIGTERM handler")
            .recv()
            .await;
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = terminate => {}
    }
    state.draining.store(true, Ordering::SeqCst);
}

pub async fn serve(pipeline: DynPipeline, config: EngineConfig, addr: &str) -> anyhow::Result<()> {
    let state = Arc::new(AppState {
        pipeline,
        default_k: config.k,
        draining: AtomicBool::new(false),
    });
    let app = Router::new()
        .route("/ask", post(ask))
        .route("/catalog", get(catalog))
        .route("/healthz", get(healthz))
        .with_state(state.clone());

    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal(state))
        .await?;
    Ok(())
}
