//! JSON routes over the session actors, plus the server-sent event stream.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::broadcast::{self, error::RecvError};
use treasure_bridge::BridgeClient;
use treasure_core::config::parse_config;
use treasure_core::hitl::{HitlError, RewardInput, RewardOverride, TrainingMode};
use treasure_core::layers::{q_layer, trajectory_layer, visit_layer};
use treasure_core::session::{Control, SessionError, SessionStatus};
use treasure_core::{Action, FormatError, Hyperparams, MazeConfig, Session, SessionInput, TrainingEvent};

use crate::actor::{ActorError, SessionHandle};
use crate::settings::ServerSettings;

/// Shared server state: the session table and the defaults new sessions
/// start from.
pub struct AppState {
    settings: ServerSettings,
    default_maze: MazeConfig,
    default_hyperparams: Hyperparams,
    sessions: RwLock<HashMap<u64, SessionHandle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(settings: ServerSettings, default_maze: MazeConfig, default_hyperparams: Hyperparams) -> Self {
        Self {
            settings,
            default_maze,
            default_hyperparams,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    fn register(&self, session: Session, bridge_url: Option<&str>) -> u64 {
        let bridge = bridge_url
            .or(self.settings.bridge_url.as_deref())
            .map(|url| BridgeClient::new(url, self.settings.bridge_timeout()));
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let handle = SessionHandle::spawn(session, bridge);
        self.sessions.write().expect("session table").insert(id, handle);
        id
    }

    fn session(&self, id: u64) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .expect("session table")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<ActorError> for ApiError {
    fn from(e: ActorError) -> Self {
        let status = match &e {
            ActorError::Session(SessionError::Running)
            | ActorError::Session(SessionError::Loop(HitlError::NotAwaitingAdvice | HitlError::NotAwaitingReward)) => {
                StatusCode::CONFLICT
            }
            ActorError::Session(SessionError::Loop(HitlError::Learning(_))) | ActorError::Closed => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            ActorError::Session(_) => StatusCode::BAD_REQUEST,
            ActorError::Format(FormatError::Io { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
            ActorError::Format(_) => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        ActorError::Format(e).into()
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/session", post(create))
        .route("/session/load", post(load))
        .route("/session/{id}/status", get(status))
        .route("/session/{id}/control", post(control))
        .route("/session/{id}/mode", post(mode))
        .route("/session/{id}/epsilon", post(epsilon))
        .route("/session/{id}/advice", post(advice))
        .route("/session/{id}/reward", post(reward))
        .route("/session/{id}/qtable", get(qtable))
        .route("/session/{id}/visits", get(visits))
        .route("/session/{id}/trajectory", get(trajectory))
        .route("/session/{id}/events", get(events))
        .route("/session/{id}/save", post(save))
        .with_state(state)
}

/// Binds and returns the bound address with the server future.
pub async fn bind(
    state: AppState,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(state.settings.bind).await?;
    let local = listener.local_addr()?;
    let app = router(Arc::new(state));
    Ok((local, async move { axum::serve(listener, app).await }))
}

#[derive(Serialize)]
struct Created {
    id: u64,
    status: SessionStatus,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    /// A maze config document, same schema as a config file.
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    hyperparams: Option<Hyperparams>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    step_interval_ms: Option<u64>,
    #[serde(default)]
    bridge_url: Option<String>,
}

async fn create(State(state): Shared, bytes: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: CreateRequest = if bytes.is_empty() {
        CreateRequest::default()
    } else {
        body(&bytes)?
    };
    let (maze, file_hp) = match &req.config {
        Some(doc) => {
            let loaded = parse_config(&doc.to_string())?;
            (loaded.maze, loaded.hyperparams)
        }
        None => (state.default_maze.clone(), None),
    };
    let hp = req.hyperparams.or(file_hp).unwrap_or(state.default_hyperparams);
    let interval = req.step_interval_ms.unwrap_or(state.settings.step_interval_ms);
    let session = Session::new(maze, hp, req.seed).with_step_interval(interval);
    let status = session.status();
    let id = state.register(session, req.bridge_url.as_deref());
    Ok((StatusCode::CREATED, Json(Created { id, status })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathRequest {
    path: PathBuf,
}

async fn load(State(state): Shared, bytes: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let req: PathRequest = body(&bytes)?;
    let session = Session::load(&req.path)?;
    let status = session.status();
    let id = state.register(session, None);
    Ok((StatusCode::CREATED, Json(Created { id, status })))
}

async fn save(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<Value>> {
    let req: PathRequest = body(&bytes)?;
    state.session(id)?.save(req.path.clone()).await?;
    Ok(Json(json!({ "path": req.path })))
}

async fn status(State(state): Shared, Path(id): Path<u64>) -> ApiResult<Json<SessionStatus>> {
    Ok(Json(state.session(id)?.read(|s| s.status()).await?))
}

async fn send_input(state: &AppState, id: u64, input: SessionInput) -> ApiResult<Json<SessionStatus>> {
    Ok(Json(state.session(id)?.input(input).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlRequest {
    command: Control,
}

async fn control(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<SessionStatus>> {
    let req: ControlRequest = body(&bytes)?;
    send_input(&state, id, SessionInput::Control(req.command)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeRequest {
    mode: TrainingMode,
}

async fn mode(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<SessionStatus>> {
    let req: ModeRequest = body(&bytes)?;
    send_input(&state, id, SessionInput::SetMode(req.mode)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpsilonRequest {
    epsilon: f64,
}

async fn epsilon(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<SessionStatus>> {
    let req: EpsilonRequest = body(&bytes)?;
    send_input(&state, id, SessionInput::SetEpsilon(req.epsilon)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdviceRequest {
    action: Action,
}

async fn advice(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<SessionStatus>> {
    let req: AdviceRequest = body(&bytes)?;
    send_input(&state, id, SessionInput::Advice(req.action)).await
}

/// Either `{"override": r}` or `{"confirm": true}`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardRequest {
    #[serde(default, rename = "override")]
    value: Option<f64>,
    #[serde(default)]
    confirm: bool,
}

async fn reward(State(state): Shared, Path(id): Path<u64>, bytes: Bytes) -> ApiResult<Json<SessionStatus>> {
    let req: RewardRequest = body(&bytes)?;
    let input = match (req.value, req.confirm) {
        (Some(r), false) => {
            RewardInput::Override(RewardOverride::new(r).map_err(|e| ApiError::bad_request(e.to_string()))?)
        }
        (None, true) => RewardInput::Confirm,
        _ => return Err(ApiError::bad_request("give exactly one of override or confirm")),
    };
    send_input(&state, id, SessionInput::Reward(input)).await
}

#[derive(Deserialize)]
struct SliceQuery {
    /// Which half of the state space to show; defaults to the current
    /// episode's treasure flag.
    slice: Option<bool>,
}

fn slice_for(s: &Session, query: Option<bool>) -> bool {
    query.unwrap_or(s.training().env().treasure_collected)
}

async fn qtable(State(state): Shared, Path(id): Path<u64>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let layer = state
        .session(id)?
        .read(move |s| q_layer(s.training().q(), s.config(), slice_for(s, q.slice)))
        .await?;
    Ok(Json(layer).into_response())
}

async fn visits(State(state): Shared, Path(id): Path<u64>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let layer = state
        .session(id)?
        .read(move |s| {
            let t = s.training();
            visit_layer(t.visits(), t.q(), s.config(), slice_for(s, q.slice))
        })
        .await?;
    Ok(Json(layer).into_response())
}

async fn trajectory(State(state): Shared, Path(id): Path<u64>) -> ApiResult<Response> {
    let layer = state
        .session(id)?
        .read(|s| trajectory_layer(s.training().completed_episodes(), s.config()))
        .await?;
    Ok(Json(layer).into_response())
}

/// What a stream subscriber sees: events in order, then possibly a final
/// notice that it fell too far behind.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamItem {
    Event(TrainingEvent),
    Dropped { missed: u64 },
}

/// Turns a subscription into a stream that ends after a lag notice.
pub fn subscription_stream(rx: broadcast::Receiver<TrainingEvent>) -> impl Stream<Item = StreamItem> {
    futures::stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(event) => Some((StreamItem::Event(event), Some(rx))),
            Err(RecvError::Lagged(missed)) => Some((StreamItem::Dropped { missed }, None)),
            Err(RecvError::Closed) => None,
        }
    })
}

async fn events(
    State(state): Shared,
    Path(id): Path<u64>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    use futures::StreamExt;
    let rx = state.session(id)?.subscribe();
    let stream = subscription_stream(rx).map(|item| {
        Ok(match item {
            StreamItem::Event(e) => Event::default()
                .event("training")
                .id(e.seq.to_string())
                .json_data(&e)
                .expect("events serialize"),
            StreamItem::Dropped { missed } => Event::default()
                .event("dropped")
                .data(json!({ "reason": "subscriber fell behind", "missed": missed }).to_string()),
        })
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
