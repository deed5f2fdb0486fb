//! JSON-over-HTTP surface plus the background consolidation worker.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use strata_core::consolidate::ConsolidateError;
use strata_core::ingest::IngestError;
use strata_core::query::QueryError;
use strata_core::{Engine, EngineError};

use crate::ops::{self, envelope, FieldErrors};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Set whenever the in-memory store has changes not yet saved.
    pub dirty: Arc<AtomicBool>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        AppState { engine, dirty: Arc::new(AtomicBool::new(false)) }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ingest", post(ingest))
        .route("/query", post(query))
        .route("/consolidate", post(consolidate))
        .route("/audit", get(audit))
        .route("/config", get(config))
        .with_state(state)
}

fn reply<T: Serialize>(engine: &Engine, status: StatusCode, body: T) -> Response {
    (status, Json(envelope(engine, body))).into_response()
}

fn field_errors(engine: &Engine, fields: FieldErrors) -> Response {
    reply(engine, StatusCode::BAD_REQUEST, json!({"error": "invalid request body", "fields": fields}))
}

pub fn status_for(err: &EngineError) -> StatusCode {
    match err {
        EngineError::Query(QueryError::EmptyQuery) | EngineError::Ingest(IngestError::BlankText) | EngineError::Config(_) => {
            StatusCode::BAD_REQUEST
        }
        EngineError::Query(QueryError::NoMemory) => StatusCode::NOT_FOUND,
        EngineError::Ingest(IngestError::Graph(_)) => StatusCode::CONFLICT,
        EngineError::Provider(_) | EngineError::Consolidate(ConsolidateError::Provider { .. }) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn engine_error(engine: &Engine, err: EngineError) -> Response {
    reply(engine, status_for(&err), json!({"error": err.to_string()}))
}

fn parse_body(bytes: &Bytes) -> Result<Value, FieldErrors> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(json!({}));
    }
    serde_json::from_slice(bytes).map_err(|e| FieldErrors::from([("body".into(), format!("not valid JSON: {e}"))]))
}

/// Runs blocking engine work (providers may do network I/O) off the
/// async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("engine task panicked")
}

async fn health(State(s): State<AppState>) -> Response {
    reply(&s.engine, StatusCode::OK, json!({"status": "ok"}))
}

async fn config(State(s): State<AppState>) -> Response {
    reply(&s.engine, StatusCode::OK, json!({"config": s.engine.config()}))
}

async fn ingest(State(s): State<AppState>, body: Bytes) -> Response {
    let turn = match parse_body(&body).and_then(|v| ops::ingest_request(&v)) {
        Ok(t) => t,
        Err(fields) => return field_errors(&s.engine, fields),
    };
    let engine = s.engine.clone();
    match blocking(move || ops::ingest(&engine, &[turn])).await {
        Ok(out) => {
            s.dirty.store(true, Ordering::SeqCst);
            reply(&s.engine, StatusCode::OK, out)
        }
        Err(e) => engine_error(&s.engine, e),
    }
}

async fn query(State(s): State<AppState>, body: Bytes) -> Response {
    let input = match parse_body(&body).and_then(|v| ops::query_request(&v)) {
        Ok(q) => q,
        Err(fields) => return field_errors(&s.engine, fields),
    };
    let engine = s.engine.clone();
    match blocking(move || ops::query(&engine, &input)).await {
        Ok(out) => {
            if !out.written_back.is_empty() {
                s.dirty.store(true, Ordering::SeqCst);
            }
            // The context is returned even when answer synthesis failed.
            let status = if out.provider_failed() { StatusCode::BAD_GATEWAY } else { StatusCode::OK };
            reply(&s.engine, status, out)
        }
        Err(e) => engine_error(&s.engine, e),
    }
}

async fn consolidate(State(s): State<AppState>, body: Bytes) -> Response {
    let max_items = match parse_body(&body).and_then(|v| ops::consolidate_request(&v)) {
        Ok(m) => m,
        Err(fields) => return field_errors(&s.engine, fields),
    };
    let engine = s.engine.clone();
    match blocking(move || ops::consolidate(&engine, max_items)).await {
        Ok(out) => {
            s.dirty.store(true, Ordering::SeqCst);
            reply(&s.engine, StatusCode::OK, out)
        }
        Err(e) => engine_error(&s.engine, e),
    }
}

async fn audit(State(s): State<AppState>) -> Response {
    let engine = s.engine.clone();
    let out = blocking(move || ops::audit(&engine)).await;
    reply(&s.engine, StatusCode::OK, out)
}

/// Drains the queue in small batches and saves the store when it changed.
/// Runs until `stop` is set, then saves one last time.
pub fn spawn_worker(state: AppState, stop: Arc<AtomicBool>, idle: Duration) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let mut slow_path_ok = true;
        while !stop.load(Ordering::SeqCst) {
            let mut worked = false;
            if slow_path_ok && state.engine.queue_len() > 0 {
                match state.engine.consolidate(Some(8)) {
                    Ok(summary) => {
                        worked = summary.processed + summary.requeued + summary.abandoned > 0;
                        state.dirty.store(true, Ordering::SeqCst);
                    }
                    Err(EngineError::Provider(e)) => {
                        tracing::warn!(error = %e, "consolidation worker disabled");
                        slow_path_ok = false;
                    }
                    Err(e) => tracing::error!(error = %e, "consolidation batch failed"),
                }
            }
            if state.dirty.swap(false, Ordering::SeqCst) {
                if let Err(e) = state.engine.save() {
                    tracing::error!(error = %e, "saving store failed");
                    state.dirty.store(true, Ordering::SeqCst);
                }
            }
            if !worked {
                std::thread::sleep(idle);
            }
        }
        if let Err(e) = state.engine.save() {
            tracing::error!(error = %e, "final save failed");
        }
    })
}

/// Serves until `shutdown` resolves, lets in-flight requests finish, stops
/// the worker and persists the store and queue journal.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr, idle: Duration, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let state = AppState::new(engine);
    let stop = Arc::new(AtomicBool::new(false));
    let worker = spawn_worker(state.clone(), stop.clone(), idle);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    let served = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    stop.store(true, Ordering::SeqCst);
    tokio::task::spawn_blocking(move || worker.join()).await?.map_err(|_| anyhow::anyhow!("worker thread panicked"))?;
    served?;
    Ok(())
}
