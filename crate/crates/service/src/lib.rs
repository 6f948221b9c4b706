//! HTTP session service for guided calibration: ingest corner captures,
//! recalibrate, suggest the next pose, render uncertainty maps and simulate
//! a virtual camera.

mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OnceCell};

use calibwiz_core::calibration::{ImageObservations, ObservationSet, StateFile};
use calibwiz_core::corner::CornerModel;
use calibwiz_core::geometry::Pose;
use calibwiz_core::umap::StatKind;

pub use error::ApiError;
pub use session::{
    CalibrationSummary, Mode, NextPose, ProximityReport, Session, SessionConfig, VirtualCapture,
};

type Shared = Arc<Mutex<Session>>;

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Shared>>>,
    model: Arc<OnceCell<Arc<CornerModel>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uses an already built corner model for weighted suggestions.
    pub fn with_corner_model(model: CornerModel) -> Self {
        let s = Self::default();
        s.model.set(Arc::new(model)).ok();
        s
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        let map = self.sessions.read().expect("session map lock");
        map.get(id).cloned().ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
    }

    async fn corner_model(&self) -> Result<Arc<CornerModel>, ApiError> {
        self.model
            .get_or_try_init(|| async {
                let built = tokio::task::spawn_blocking(CornerModel::build_default)
                    .await
                    .map_err(|e| ApiError::Internal(e.to_string()))?;
                built.map(Arc::new).map_err(|e| ApiError::Internal(e.to_string()))
            })
            .await
            .cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }
}

/// Runs `f` on the blocking pool with exclusive access to the session.
async fn with_session<T, F>(session: Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&mut session.blocking_lock()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

fn json_text(text: impl Into<String>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text.into()).into_response()
}

#[derive(Serialize)]
struct Created {
    id: String,
    config: SessionConfig,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::InvalidConfig(e.to_string()))?
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), config.clone())?;
    app.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(Mutex::new(session)));
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(Created { id, config })).into_response())
}

async fn submit_observation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<CalibrationSummary>, ApiError> {
    let session = app.session(&id)?;
    let image: ImageObservations =
        serde_json::from_slice(&body).map_err(|e| ApiError::SchemaError(e.to_string()))?;
    with_session(session, move |s| s.submit(image)).await.map(Json)
}

async fn get_calibration(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<CalibrationSummary>, ApiError> {
    let session = app.session(&id)?;
    let summary = session.lock().await.summary();
    Ok(Json(summary))
}

fn flag(query: &HashMap<String, String>, key: &str) -> Result<bool, ApiError> {
    match query.get(key).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") | Some("") => Ok(true),
        Some(other) => Err(ApiError::SchemaError(format!("{key} must be a boolean, got '{other}'"))),
    }
}

async fn next_pose(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let weighted = flag(&query, "weighted")?;
    let session = app.session(&id)?;
    let (job, cancel) = {
        let mut s = session.lock().await;
        if let Some(cached) = s.cached_suggestion(weighted) {
            return Ok(json_text(&*cached));
        }
        s.planning_job(weighted)?
    };
    let model = if weighted { Some(app.corner_model().await?) } else { None };
    let run = job.clone();
    let result = tokio::task::spawn_blocking(move || run.run(model.as_deref(), &cancel))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let json = session.lock().await.finish_planning(&job, result)?;
    Ok(json_text(&*json))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptureRequest {
    pose: Pose,
}

async fn virtual_capture(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<VirtualCapture>, ApiError> {
    let session = app.session(&id)?;
    let req: CaptureRequest = serde_json::from_slice(&body).map_err(|e| ApiError::SchemaError(e.to_string()))?;
    with_session(session, move |s| s.virtual_capture(&req.pose)).await.map(Json)
}

async fn uncertainty_map(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let stat: StatKind = match query.get("stat") {
        None => StatKind::Trace,
        Some(s) => s.parse().map_err(|_| ApiError::SchemaError(format!("unknown stat '{s}'")))?,
    };
    let session = app.session(&id)?;
    let map = with_session(session, move |s| s.uncertainty_map(stat)).await?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], map.to_sidecar()).into_response())
}

#[derive(Serialize)]
struct Export {
    config: SessionConfig,
    observations: ObservationSet,
    state: Option<StateFile>,
    history: Vec<f64>,
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Export>, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    Ok(Json(Export {
        config: s.config.clone(),
        observations: s.obs.clone(),
        state: s.state.as_ref().map(|st| StateFile::new(st, &s.obs)),
        history: s.history.clone(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/observations", post(submit_observation))
        .route("/sessions/{id}/calibration", get(get_calibration))
        .route("/sessions/{id}/next-pose", get(next_pose))
        .route("/sessions/{id}/virtual-capture", post(virtual_capture))
        .route("/sessions/{id}/uncertainty-map", get(uncertainty_map))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
