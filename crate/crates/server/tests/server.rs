use std::net::SocketAddr;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};
use treasure_bridge::RobotSim;
use treasure_core::hitl::{StepPhase, TrainingMode};
use treasure_core::session::{Control, EventKind, InputKind, SessionStatus};
use treasure_core::{Hyperparams, MazeConfig, Session, SessionInput, TrainingEvent};
use treasure_server::api::{subscription_stream, StreamItem};
use treasure_server::{AppState, ServerSettings, SessionHandle};

struct Server {
    base: String,
    http: reqwest::Client,
}

impl Server {
    async fn start() -> Self {
        Self::start_with(ServerSettings::default()).await
    }

    async fn start_with(settings: ServerSettings) -> Self {
        let settings = ServerSettings {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            step_interval_ms: 0,
            ..settings
        };
        let state = AppState::new(settings, MazeConfig::default(), Hyperparams::default());
        let (addr, server) = treasure_server::bind(state).await.unwrap();
        tokio::spawn(server);
        Self {
            base: format!("http://{addr}"),
            http: reqwest::Client::new(),
        }
    }

    async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let response = self
            .http
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .await
            .unwrap();
        let status = response.status().as_u16();
        (status, serde_json::from_str(&response.text().await.unwrap()).unwrap())
    }

    async fn get(&self, path: &str) -> (u16, Value) {
        let response = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = response.status().as_u16();
        (status, serde_json::from_str(&response.text().await.unwrap()).unwrap())
    }

    async fn create(&self, body: Value) -> u64 {
        let (code, created) = self.post("/session", body).await;
        assert_eq!(code, 201, "{created}");
        created["id"].as_u64().unwrap()
    }

    async fn ok(&self, path: &str, body: Value) -> SessionStatus {
        let (code, v) = self.post(path, body).await;
        assert_eq!(code, 200, "{path}: {v}");
        serde_json::from_value(v).unwrap()
    }

    async fn status(&self, id: u64) -> SessionStatus {
        let (code, v) = self.get(&format!("/session/{id}/status")).await;
        assert_eq!(code, 200, "{v}");
        serde_json::from_value(v).unwrap()
    }
}

/// Reads `n` training events from the SSE endpoint.
async fn read_sse(server: &Server, id: u64, ready: tokio::sync::oneshot::Sender<()>, n: usize) -> Vec<TrainingEvent> {
    let response = server
        .http
        .get(format!("{}/session/{id}/events", server.base))
        .send()
        .await
        .unwrap();
    assert_eq!(response.status().as_u16(), 200);
    let _ = ready.send(());
    let mut stream = response.bytes_stream();
    let mut buffer = String::new();
    let mut events = Vec::new();
    while events.len() < n {
        let chunk = tokio::time::timeout(Duration::from_secs(5), stream.next())
            .await
            .expect("event in time")
            .expect("stream open")
            .unwrap();
        buffer.push_str(std::str::from_utf8(&chunk).unwrap());
        while let Some(end) = buffer.find("\n\n") {
            let frame: String = buffer.drain(..end + 2).collect();
            if let Some(data) = frame
                .lines()
                .find_map(|l| l.strip_prefix("data: ").or_else(|| l.strip_prefix("data:")))
            {
                if frame.contains("event: training") || frame.contains("event:training") {
                    events.push(serde_json::from_str(data).unwrap());
                }
            }
        }
    }
    events
}

async fn wait_for(server: &Server, id: u64, pred: impl Fn(&SessionStatus) -> bool) -> SessionStatus {
    for _ in 0..500 {
        let s = server.status(id).await;
        if pred(&s) {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("condition not reached");
}

#[tokio::test]
async fn fresh_session_layers() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 1})).await;
    let status = server.status(id).await;
    assert_eq!(status.status.phase, StepPhase::ObserveState);
    assert_eq!(status.status.mode, TrainingMode::Auto);
    assert!(!status.running);
    let (_, q) = server.get(&format!("/session/{id}/qtable")).await;
    assert_eq!((q["min"].as_f64(), q["max"].as_f64()), (Some(0.0), Some(0.0)));
    assert_eq!(q["treasure_flag_slice"], false);
    // corner cell: two masked actions
    let corner = &q["cells"][0]["values"];
    assert_eq!(corner.as_array().unwrap().iter().filter(|v| v.is_null()).count(), 2);
    let (_, t) = server.get(&format!("/session/{id}/trajectory")).await;
    assert_eq!(t["available"], false);
    assert_eq!(t["steps"].as_array().unwrap().len(), 0);
    let (_, v) = server.get(&format!("/session/{id}/visits?slice=true")).await;
    assert_eq!(v["treasure_flag_slice"], true);
    assert_eq!(v["total"], 0);
}

#[tokio::test]
async fn unknown_sessions_and_bad_bodies() {
    let server = Server::start().await;
    let (code, v) = server.get("/session/99/status").await;
    assert_eq!((code, v["error"].as_str()), (404, Some("no session 99")));
    let id = server.create(json!({})).await;
    let (code, v) = server
        .post(&format!("/session/{id}/control"), json!({"command": "fly"}))
        .await;
    assert_eq!(code, 400);
    assert!(v["error"].as_str().unwrap().starts_with("invalid request body"), "{v}");
    let (code, v) = server
        .post(&format!("/session/{id}/epsilon"), json!({"epsilon": 1.5}))
        .await;
    assert_eq!((code, v["error"].as_str()), (400, Some("epsilon 1.5 outside [0, 1]")));
    let (code, _) = server.post("/session", json!({"config": {"schema_version": 9}})).await;
    assert_eq!(code, 400);
}

#[tokio::test]
async fn step_in_auto_completes_exactly_one_step() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 3})).await;
    let (ready_tx, ready_rx) = tokio::sync::oneshot::channel();
    let base = Server {
        base: server.base.clone(),
        http: server.http.clone(),
    };
    let reader = tokio::spawn(async move { read_sse(&base, id, ready_tx, 7).await });
    ready_rx.await.unwrap();
    // give the subscription a moment to register
    tokio::time::sleep(Duration::from_millis(50)).await;
    let status = server
        .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
        .await;
    assert_eq!(status.status.phase, StepPhase::ObserveState);
    assert_eq!(status.next_seq, 7);
    let events = reader.await.unwrap();
    let steps = events
        .iter()
        .filter(|e| matches!(e.event, EventKind::StepCompleted { .. }))
        .count();
    assert_eq!(steps, 1);
    assert!(events.iter().any(|e| matches!(e.event, EventKind::QCellUpdated { .. })));
    let (_, v) = server.get(&format!("/session/{id}/visits?slice=false")).await;
    assert_eq!(v["total"], 1);
}

#[tokio::test]
async fn two_sse_subscribers_see_the_same_feed() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 4})).await;
    let mut readers = Vec::new();
    for _ in 0..2 {
        let (tx, rx) = tokio::sync::oneshot::channel();
        let s = Server {
            base: server.base.clone(),
            http: reqwest::Client::new(),
        };
        readers.push(tokio::spawn(async move { read_sse(&s, id, tx, 14).await }));
        rx.await.unwrap();
    }
    tokio::time::sleep(Duration::from_millis(50)).await;
    for _ in 0..2 {
        server
            .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
            .await;
    }
    let a = readers.remove(0).await.unwrap();
    let b = readers.remove(0).await.unwrap();
    assert_eq!(a, b);
    let seqs: Vec<u64> = a.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (0..14).collect::<Vec<_>>());
    let phases = a
        .iter()
        .filter(|e| matches!(e.event, EventKind::PhaseChanged { .. }))
        .count();
    assert_eq!(phases, 10);
    assert_eq!(
        a.iter()
            .filter(|e| matches!(e.event, EventKind::StepCompleted { .. }))
            .count(),
        2
    );
}

#[tokio::test]
async fn step_while_running_is_rejected() {
    let server = Server::start().await;
    let id = server.create(json!({"step_interval_ms": 50})).await;
    server
        .ok(&format!("/session/{id}/control"), json!({"command": "start"}))
        .await;
    let (code, v) = server
        .post(&format!("/session/{id}/control"), json!({"command": "step"}))
        .await;
    assert_eq!((code, v["error"].as_str()), (409, Some("pause first")));
    let status = server
        .ok(&format!("/session/{id}/control"), json!({"command": "pause"}))
        .await;
    assert!(!status.running);
}

#[tokio::test]
async fn manual_override_updates_q_exactly() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 5})).await;
    let path = |p: &str| format!("/session/{id}/{p}");
    let status = server.ok(&path("mode"), json!({"mode": "Manual"})).await;
    assert_eq!(status.status.mode, TrainingMode::Manual);
    // advice is only accepted while the loop waits for it
    let (code, v) = server.post(&path("advice"), json!({"action": "Down"})).await;
    assert_eq!((code, v["error"].as_str()), (409, Some("not awaiting advice")));
    let status = server.ok(&path("control"), json!({"command": "step"})).await;
    assert_eq!(status.status.awaiting, Some(treasure_core::hitl::AwaitingKind::Advice));
    let (code, v) = server.post(&path("advice"), json!({"action": "Up"})).await;
    assert_eq!((code, v["error"].as_str()), (400, Some("action is masked here")));
    server.ok(&path("advice"), json!({"action": "Right"})).await;
    let status = server.ok(&path("control"), json!({"command": "step"})).await;
    assert_eq!(status.status.awaiting, Some(treasure_core::hitl::AwaitingKind::Reward));
    let (code, _) = server.post(&path("reward"), json!({"override": 31.0})).await;
    assert_eq!(code, 400);
    let (code, _) = server
        .post(&path("reward"), json!({"override": 1.0, "confirm": true}))
        .await;
    assert_eq!(code, 400);
    server.ok(&path("reward"), json!({"override": 12.5})).await;
    let status = server.ok(&path("control"), json!({"command": "step"})).await;
    assert_eq!(status.status.phase, StepPhase::ObserveState);
    assert_eq!(status.status.last_reward, Some(12.5));
    let (_, q) = server.get(&path("qtable?slice=false")).await;
    // Q(s0, Right) = 0 + 0.05 * (12.5 + 0.9 * 0 - 0); Right is action 3
    assert_eq!(q["cells"][0]["values"][3].as_f64(), Some(0.05 * 12.5));
}

#[tokio::test]
async fn running_session_reports_coherent_scores() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 6})).await;
    // a handle-level twin gives direct access to the event feed
    let session = Session::new(MazeConfig::default(), Hyperparams::default(), 6).with_step_interval(0);
    let handle = SessionHandle::spawn(session, None);
    let mut rx = handle.subscribe();
    handle.input(SessionInput::Control(Control::Start)).await.unwrap();
    server
        .ok(&format!("/session/{id}/control"), json!({"command": "start"}))
        .await;
    let mut step_sum = 0.0;
    let mut episodes = 0;
    while episodes < 5 {
        let event = rx.recv().await.unwrap();
        match event.event {
            EventKind::StepCompleted { record, score, .. } => {
                step_sum += record.r;
                assert_eq!(score, step_sum);
            }
            EventKind::EpisodeCompleted { score, aborted, .. } => {
                assert!(!aborted);
                assert_eq!(score, step_sum);
                step_sum = 0.0;
                episodes += 1;
            }
            _ => {}
        }
    }
    let status = handle.input(SessionInput::Control(Control::Pause)).await.unwrap();
    assert!(!status.running);
    let done = wait_for(&server, id, |s| s.completed_episodes >= 3).await;
    assert!(done.running);
    let paused = server
        .ok(&format!("/session/{id}/control"), json!({"command": "pause"}))
        .await;
    assert!(!paused.running);
    let (_, t) = server.get(&format!("/session/{id}/trajectory")).await;
    assert_eq!(t["available"], true);
    let treasure_events = t["steps"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|s| s["event"] == "TreasureFound")
        .count();
    assert!(treasure_events <= 1);
}

#[tokio::test]
async fn reset_mid_episode_aborts_it() {
    let server = Server::start().await;
    let id = server.create(json!({"seed": 7})).await;
    let session = Session::new(MazeConfig::default(), Hyperparams::default(), 7);
    let handle = SessionHandle::spawn(session, None);
    let mut rx = handle.subscribe();
    handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    handle.input(SessionInput::Control(Control::Reset)).await.unwrap();
    let mut aborted = None;
    while let Ok(e) = rx.try_recv() {
        if let EventKind::EpisodeCompleted { aborted: a, steps, .. } = e.event {
            aborted = Some((a, steps));
        }
    }
    assert_eq!(aborted, Some((true, 1)));
    server
        .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
        .await;
    let status = server
        .ok(&format!("/session/{id}/control"), json!({"command": "reset"}))
        .await;
    assert_eq!(status.completed_episodes, 1);
    assert_eq!(status.status.episode, 1);
    let (_, t) = server.get(&format!("/session/{id}/trajectory")).await;
    assert_eq!(t["available"], false);
}

#[tokio::test]
async fn epsilon_change_is_announced_before_the_next_choice() {
    let handle = SessionHandle::spawn(Session::new(MazeConfig::default(), Hyperparams::default(), 8), None);
    let mut rx = handle.subscribe();
    handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    handle.input(SessionInput::SetEpsilon(0.5)).await.unwrap();
    handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    let mut kinds = Vec::new();
    while let Ok(e) = rx.try_recv() {
        kinds.push(e.event);
    }
    let eps = kinds
        .iter()
        .position(|k| matches!(k, EventKind::EpsilonChanged { epsilon } if *epsilon == 0.5))
        .unwrap();
    let next_choose = kinds
        .iter()
        .enumerate()
        .skip(eps)
        .find(|(_, k)| {
            matches!(
                k,
                EventKind::PhaseChanged {
                    phase: StepPhase::ChooseAction
                }
            )
        })
        .map(|(i, _)| i)
        .unwrap();
    assert!(eps < next_choose);
}

#[tokio::test]
async fn slow_subscriber_is_dropped_with_a_notice() {
    let session = Session::new(MazeConfig::default(), Hyperparams::default(), 9);
    let handle = SessionHandle::spawn_with_buffer(session, None, 8);
    let rx = handle.subscribe();
    for _ in 0..5 {
        handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    }
    let items: Vec<StreamItem> = subscription_stream(rx).collect().await;
    assert_eq!(items.len(), 1);
    assert!(matches!(items[0], StreamItem::Dropped { missed } if missed > 0));
    // the session itself carried on
    let status = handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    assert_eq!(status.completed_episodes + status.status.episode as usize, 0);
}

#[tokio::test]
async fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start().await;
    let id = server.create(json!({"seed": 10})).await;
    for _ in 0..7 {
        server
            .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
            .await;
    }
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    let (code, _) = server
        .post(&format!("/session/{id}/save"), json!({"path": first}))
        .await;
    assert_eq!(code, 200);
    let (code, created) = server.post("/session/load", json!({"path": first})).await;
    assert_eq!(code, 201, "{created}");
    let loaded = created["id"].as_u64().unwrap();
    assert_ne!(loaded, id);
    assert_eq!(server.status(loaded).await, server.status(id).await);
    server
        .post(&format!("/session/{loaded}/save"), json!({"path": second}))
        .await;
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    // both continue identically
    let a = server
        .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
        .await;
    let b = server
        .ok(&format!("/session/{loaded}/control"), json!({"command": "step"}))
        .await;
    assert_eq!(a, b);

    std::fs::write(dir.path().join("bad.json"), "{\"schema_version\": 1,").unwrap();
    let (code, v) = server
        .post("/session/load", json!({"path": dir.path().join("bad.json")}))
        .await;
    assert_eq!(code, 400);
    assert!(v["error"].as_str().unwrap().contains("byte"), "{v}");
}

#[tokio::test]
async fn sessions_are_independent() {
    let server = Server::start().await;
    let a = server.create(json!({"seed": 1})).await;
    let b = server.create(json!({"seed": 1})).await;
    server
        .ok(&format!("/session/{a}/mode"), json!({"mode": "Manual"}))
        .await;
    server
        .ok(&format!("/session/{b}/control"), json!({"command": "step"}))
        .await;
    assert_eq!(server.status(a).await.status.mode, TrainingMode::Manual);
    assert_eq!(server.status(a).await.status.phase, StepPhase::ObserveState);
    assert_eq!(server.status(b).await.status.mode, TrainingMode::Auto);
}

#[tokio::test]
async fn custom_config_and_hyperparams() {
    let server = Server::start().await;
    let config = json!({
        "schema_version": 1,
        "width": 4, "height": 2,
        "start": [0, 0], "treasure": [1, 0], "exit": [1, 3],
        "hyperparams": {"alpha": 0.5, "gamma": 0.5, "epsilon": 0.0}
    });
    let id = server.create(json!({"config": config})).await;
    let status = server.status(id).await;
    assert_eq!(status.epsilon, 0.0);
    let (_, q) = server.get(&format!("/session/{id}/qtable")).await;
    assert_eq!((q["width"].as_u64(), q["height"].as_u64()), (Some(4), Some(2)));
}

async fn spawn_bridge(move_ms: u64) -> String {
    let robot = RobotSim::for_maze(&MazeConfig::default(), 2);
    let (addr, server) = treasure_bridge::http::bind(
        SocketAddr::from(([127, 0, 0, 1], 0)),
        robot,
        Duration::from_millis(move_ms),
    )
    .await
    .unwrap();
    tokio::spawn(server);
    format!("http://{addr}")
}

#[tokio::test]
async fn robot_follows_the_session() {
    let bridge = spawn_bridge(0).await;
    let session = Session::new(MazeConfig::default(), Hyperparams::default(), 11);
    let client = treasure_bridge::BridgeClient::new(&bridge, Duration::from_secs(2));
    let handle = SessionHandle::spawn(session, Some(client.clone()));
    let mut rx = handle.subscribe();
    let mut checked = 0;
    while checked < 60 {
        handle.input(SessionInput::Control(Control::Step)).await.unwrap();
        while let Ok(e) = rx.try_recv() {
            if let EventKind::StepCompleted { record, .. } = e.event {
                let cell = record.s_next % 9;
                let pose = client.telemetry().await.unwrap();
                assert_eq!((pose.row, pose.col), (cell / 3, cell % 3), "step {checked}");
                checked += 1;
            }
        }
    }
}

#[tokio::test]
async fn server_uses_the_configured_bridge() {
    let bridge = spawn_bridge(0).await;
    let server = Server::start_with(ServerSettings {
        bridge_url: Some(bridge.clone()),
        ..ServerSettings::default()
    })
    .await;
    let id = server.create(json!({"seed": 11})).await;
    for _ in 0..3 {
        server
            .ok(&format!("/session/{id}/control"), json!({"command": "step"}))
            .await;
    }
    let (_, q) = server.get(&format!("/session/{id}/visits?slice=false")).await;
    assert_eq!(q["total"], 3);
    let pose = treasure_bridge::BridgeClient::new(&bridge, Duration::from_secs(2))
        .telemetry()
        .await
        .unwrap();
    // three moves from the start cell cannot reach the far corner
    assert!(pose.row + pose.col <= 3);
}

#[tokio::test]
async fn unreachable_bridge_pauses_the_session() {
    let server = Server::start_with(ServerSettings {
        bridge_url: Some("http://127.0.0.1:9".into()),
        bridge_timeout_ms: 200,
        ..ServerSettings::default()
    })
    .await;
    let id = server.create(json!({"seed": 12})).await;
    server
        .ok(&format!("/session/{id}/control"), json!({"command": "start"}))
        .await;
    let status = wait_for(&server, id, |s| !s.running).await;
    // the move was never executed
    assert_eq!(status.status.phase, StepPhase::ExecuteAction);
    assert_eq!(status.status.score, 0.0);
}

#[tokio::test]
async fn bridge_down_event_is_published() {
    let session = Session::new(MazeConfig::default(), Hyperparams::default(), 13);
    let client = treasure_bridge::BridgeClient::new("http://127.0.0.1:9", Duration::from_millis(200));
    let handle = SessionHandle::spawn(session, Some(client));
    let mut rx = handle.subscribe();
    handle.input(SessionInput::Control(Control::Step)).await.unwrap();
    let mut saw = false;
    while let Ok(e) = rx.try_recv() {
        saw |= e.event
            == EventKind::AwaitingInput {
                input: InputKind::BridgeDown,
            };
    }
    assert!(saw);
}
