//! HTTP+JSON API for stepping maintenance episodes interactively.
//!
//! Routes:
//! - `POST /sessions` creates a session from a loaded parameter set or a
//!   posterior draw;
//! - `POST /sessions/{id}/step` applies an action (with the observation in
//!   operator mode);
//! - `GET /sessions/{id}` returns the session state and history;
//! - `GET /sessions/{id}/recommend?source=qmdp|ppo` returns a recommended
//!   action and the belief-weighted action values;
//! - `GET /artifacts` lists the loaded models, posteriors and networks.
//!
//! The true hidden state appears only in sessions created with `debug=true`.

pub mod api;
pub mod error;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::Mutex;

pub use api::*;
pub use error::{ErrorBody, Result, ServiceError};
pub use session::{session_rng, Artifacts, Session};

pub struct AppState {
    pub artifacts: Artifacts,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(artifacts: Artifacts) -> Result<Arc<Self>> {
        artifacts.validate()?;
        Ok(Arc::new(Self { artifacts, sessions: RwLock::new(HashMap::new()) }))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or(ServiceError::NotFound { what: "session", name: id.into() })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session table lock").len()
    }
}

type Shared = State<Arc<AppState>>;

async fn create_session(State(state): Shared, body: std::result::Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>) -> Result<(StatusCode, Json<SessionView>)> {
    let Json(req) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::create(id.clone(), req, &state.artifacts)?;
    let view = session.view();
    state.sessions.write().expect("session table lock").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> Result<Json<SessionView>> {
    let s = state.session(&id)?;
    let view = s.lock().await.view();
    Ok(Json(view))
}

async fn step_session(
    State(state): Shared,
    Path(id): Path<String>,
    body: std::result::Result<Json<StepRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<StepResponse>> {
    let Json(req) = body.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let s = state.session(&id)?;
    let mut guard = s.lock().await;
    Ok(Json(guard.step(&req)?))
}

async fn recommend(
    State(state): Shared,
    Path(id): Path<String>,
    query: std::result::Result<Query<RecommendQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Recommendation>> {
    let Query(q) = query.map_err(|e| ServiceError::Validation(e.body_text()))?;
    let s = state.session(&id)?;
    let guard = s.lock().await;
    Ok(Json(guard.recommend(q.source, q.checkpoint.as_deref(), &state.artifacts)?))
}

async fn artifacts(State(state): Shared) -> Json<ArtifactList> {
    Json(state.artifacts.list())
}

async fn fallback() -> ServiceError {
    ServiceError::NotFound { what: "route", name: "unknown path".into() }
}

/// The API router; `static_dir`, when given, is served under `/`.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/step", post(step_session))
        .route("/sessions/{id}/recommend", get(recommend))
        .route("/artifacts", get(artifacts))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(fallback),
    }
}

/// Serve until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
