//! HTTP surface of the bridge and a client for it.
//!
//! `POST /command` takes one framed line as `text/plain` and answers with a
//! JSON [`BridgeReply`]. `GET /telemetry` returns the last completed pose.
//! The robot is a serial device: one command executes at a time and a
//! command that arrives while another is running gets `409 Conflict`.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Mutex;

use crate::codec::{decode_command, encode_command, BridgeCommand};
use crate::sim::{BridgeReply, ReplyStatus, RobotSim, WirePose};

#[derive(Clone)]
struct BridgeState {
    device: Arc<Mutex<RobotSim>>,
    telemetry: Arc<StdMutex<WirePose>>,
    move_duration: Duration,
}

/// Router for a simulated robot. `move_duration` is how long a MOVE keeps
/// the device busy.
pub fn router(robot: RobotSim, move_duration: Duration) -> Router {
    let telemetry = Arc::new(StdMutex::new(WirePose::from(&robot.pose)));
    let state = BridgeState {
        device: Arc::new(Mutex::new(robot)),
        telemetry,
        move_duration,
    };
    Router::new()
        .route("/command", post(command))
        .route("/telemetry", get(telemetry_handler))
        .with_state(state)
}

fn error_reply(code: StatusCode, pose: WirePose, message: String) -> Response {
    let body = BridgeReply {
        status: ReplyStatus::Err,
        pose,
        message,
    };
    (code, Json(body)).into_response()
}

async fn command(State(state): State<BridgeState>, body: String) -> Response {
    let last_pose = *state.telemetry.lock().expect("telemetry lock");
    let cmd = match decode_command(&body) {
        Ok(cmd) => cmd,
        Err(e) => return error_reply(StatusCode::BAD_REQUEST, last_pose, e.to_string()),
    };
    let Ok(mut device) = state.device.try_lock() else {
        return error_reply(StatusCode::CONFLICT, last_pose, "device busy".to_string());
    };
    if matches!(cmd, BridgeCommand::Move(_)) && !state.move_duration.is_zero() {
        tokio::time::sleep(state.move_duration).await;
    }
    let reply = device.execute(&cmd);
    *state.telemetry.lock().expect("telemetry lock") = reply.pose;
    tracing::debug!(command = %cmd, message = %reply.message, "executed");
    (StatusCode::OK, Json(reply)).into_response()
}

async fn telemetry_handler(State(state): State<BridgeState>) -> Json<WirePose> {
    Json(*state.telemetry.lock().expect("telemetry lock"))
}

/// Binds `addr` and serves until the task is dropped. Returns the bound
/// address (useful with port 0) and the server future.
pub async fn bind(
    addr: SocketAddr,
    robot: RobotSim,
    move_duration: Duration,
) -> std::io::Result<(SocketAddr, impl std::future::Future<Output = std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(robot, move_duration);
    Ok((local, async move { axum::serve(listener, app).await }))
}

pub async fn serve(addr: SocketAddr, robot: RobotSim, move_duration: Duration) -> std::io::Result<()> {
    let (local, server) = bind(addr, robot, move_duration).await?;
    tracing::info!(%local, "bridge listening");
    server.await
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("bridge did not answer within {0:?}")]
    Timeout(Duration),
    #[error("bridge busy")]
    Busy,
    #[error("bridge rejected the frame: {0}")]
    Rejected(String),
    #[error("bridge transport error: {0}")]
    Transport(String),
}

/// Talks to a bridge over HTTP, real or simulated.
#[derive(Debug, Clone)]
pub struct BridgeClient {
    base: String,
    http: reqwest::Client,
    timeout: Duration,
}

impl BridgeClient {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            timeout,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn send(&self, cmd: &BridgeCommand) -> Result<BridgeReply, ClientError> {
        let request = self
            .http
            .post(format!("{}/command", self.base))
            .header("content-type", "text/plain")
            .body(encode_command(cmd))
            .send();
        let response = tokio::time::timeout(self.timeout, request)
            .await
            .map_err(|_| ClientError::Timeout(self.timeout))?
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = response.status();
        let text = tokio::time::timeout(self.timeout, response.text())
            .await
            .map_err(|_| ClientError::Timeout(self.timeout))?
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match status.as_u16() {
            200 => serde_json::from_str(&text).map_err(|e| ClientError::Transport(e.to_string())),
            409 => Err(ClientError::Busy),
            _ => {
                let message = serde_json::from_str::<BridgeReply>(&text)
                    .map(|r| r.message)
                    .unwrap_or(text);
                Err(ClientError::Rejected(message))
            }
        }
    }

    pub async fn telemetry(&self) -> Result<WirePose, ClientError> {
        let request = self.http.get(format!("{}/telemetry", self.base)).send();
        let response = tokio::time::timeout(self.timeout, request)
            .await
            .map_err(|_| ClientError::Timeout(self.timeout))?
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let text = response
            .text()
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Transport(e.to_string()))
    }
}
