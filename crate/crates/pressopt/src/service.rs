//! HTTP/JSON control of runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use pressopt_core::policy::LoopState;
use pressopt_core::NamedValues;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::config::RunConfig;
use crate::profile::AcquisitionProfile;
use crate::runner::{Run, SelectError, Shared};
use crate::store::SimulationRecord;

#[derive(Clone, Default)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Default)]
struct Inner {
    runs: Mutex<BTreeMap<String, Arc<Shared>>>,
    /// Relative data paths in posted configs resolve against this.
    base_dir: PathBuf,
}

impl AppState {
    pub fn new(base_dir: PathBuf) -> Self {
        Self {
            inner: Arc::new(Inner {
                runs: Mutex::new(BTreeMap::new()),
                base_dir,
            }),
        }
    }

    pub fn register(&self, id: &str, shared: Arc<Shared>) {
        self.inner.runs.lock().expect("runs lock").insert(id.to_string(), shared);
    }

    fn get(&self, id: &str) -> Result<Arc<Shared>, ApiError> {
        self.inner
            .runs
            .lock()
            .expect("runs lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no run {id}")))
    }

    /// Asks every run to stop.
    pub fn stop_all(&self) {
        for shared in self.inner.runs.lock().expect("runs lock").values() {
            shared.request_stop();
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: String) -> Self {
        Self {
            status,
            body: json!({ "error": message }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub run_id: String,
    pub queued: usize,
    #[serde(flatten)]
    pub state: LoopState,
}

#[derive(Debug, Deserialize)]
pub struct Selection {
    pub design_point: NamedValues,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run))
        .route("/runs/{id}/state", get(run_state))
        .route("/runs/{id}/acquisition", get(acquisition))
        .route("/runs/{id}/select", post(select))
        .route("/runs/{id}/stop", post(stop))
        .route("/runs/{id}/history", get(history))
        .with_state(state)
}

async fn create_run(State(app): State<AppState>, Json(body): Json<Value>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let body = match body {
        Value::Object(mut m) if m.contains_key("config") && !m.contains_key("part_id") => m.remove("config").expect("checked"),
        other => other,
    };
    let mut config: RunConfig = serde_json::from_value(body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    config.resolve_paths(&app.inner.base_dir);
    config
        .validate()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let mut run = tokio::task::spawn_blocking(move || Run::create(config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let id = run.id.clone();
    app.register(&id, run.shared());
    let thread_id = id.clone();
    std::thread::spawn(move || match run.run_to_end(|r| info!("run {thread_id} cycle {}: {:?}", r.cycle, r.status)) {
        Ok(reason) => info!("run {thread_id} finished: {}", reason.as_str()),
        Err(e) => warn!("run {thread_id} failed: {e}"),
    });
    Ok((StatusCode::CREATED, Json(json!({ "run_id": id }))))
}

async fn run_state(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<StateView>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    Ok(Json(StateView {
        run_id: snap.run_id.clone(),
        queued: snap.queued,
        state: snap.state.clone(),
    }))
}

async fn acquisition(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<AcquisitionProfile>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    Ok(Json(snap.profile.clone().unwrap_or_default()))
}

async fn select(State(app): State<AppState>, Path(id): Path<String>, Json(body): Json<Selection>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let shared = app.get(&id)?;
    match shared.select(&body.design_point) {
        Ok(()) => Ok((StatusCode::ACCEPTED, Json(json!({ "queued": true })))),
        Err(SelectError::NotAwaiting) => Err(ApiError::new(StatusCode::CONFLICT, "run is not awaiting a selection".into())),
        Err(SelectError::Invalid(fields)) => Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "invalid design point", "fields": fields }),
        }),
    }
}

async fn stop(State(app): State<AppState>, Path(id): Path<String>) -> Result<(StatusCode, Json<Value>), ApiError> {
    app.get(&id)?.request_stop();
    Ok((StatusCode::ACCEPTED, Json(json!({ "stopping": true }))))
}

async fn history(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<SimulationRecord>>, ApiError> {
    let snap = app.get(&id)?.snapshot();
    Ok(Json(snap.history.clone()))
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(listener: TcpListener, app: AppState, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}
