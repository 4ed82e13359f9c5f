//! HTTP + WebSocket demonstration service.
//!
//! | method | path                   | body            | answer                |
//! |--------|------------------------|-----------------|-----------------------|
//! | GET    | `/`                    |                 | `{"v":1,...}`         |
//! | POST   | `/sessions`            | `CreateSession` | `SessionCreated`      |
//! | GET    | `/sessions/{id}`       |                 | state frame           |
//! | POST   | `/sessions/{id}/action`| `{"action":..}` | state frame           |
//! | POST   | `/sessions/{id}/reset` |                 | state frame           |
//! | POST   | `/sessions/{id}/end`   |                 | ended frame           |
//! | GET    | `/sessions/{id}/ws`    | upgrade         | frame stream          |
//!
//! Every session lives in its own task that owns the environment; HTTP
//! handlers and sockets talk to it through a command queue, so commands
//! apply one at a time in arrival order. State frames produced by actions
//! or resets are pushed to every socket subscribed to the session.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, oneshot};

use rlab_core::envs::ActionSpace;
use rlab_core::error::Error;
use rlab_core::experiments::teleop::{TeleopMode, TeleopSession};
use rlab_core::experiments::{AnyPolicy, EnvInstance};
use rlab_core::policy::Agent;

use crate::protocol::{
    mode_from_name, ClientFrame, CreateSession, EndedFrame, ErrorFrame, GridLayout, ServerFrame, SessionCreated,
    StateFrame, WireAction, PROTOCOL_VERSION,
};

/// Mixture probability used when a correction session does not choose one.
pub const DEFAULT_BETA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub env: EnvInstance,
    pub learner: Option<Agent<AnyPolicy>>,
    pub data_dir: PathBuf,
}

enum Command {
    Observe(oneshot::Sender<Result<StateFrame, ErrorFrame>>),
    Act(WireAction, oneshot::Sender<Result<StateFrame, ErrorFrame>>),
    Reset(oneshot::Sender<Result<StateFrame, ErrorFrame>>),
    End(oneshot::Sender<Result<EndedFrame, ErrorFrame>>),
}

#[derive(Clone)]
struct Handle {
    commands: mpsc::Sender<Command>,
    frames: broadcast::Sender<String>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Handle>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(AppState {
            config,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn handle(&self, id: &str) -> Option<Handle> {
        self.sessions.lock().expect("session table poisoned").get(id).cloned()
    }
}

fn agent_cell(session: &TeleopSession) -> Option<(usize, usize)> {
    session.env().as_navgrid().map(|g| g.agent())
}

fn frame_of(session: &TeleopSession) -> Result<StateFrame, ErrorFrame> {
    let obs = session.observation().map_err(|e| internal(session.id(), e))?;
    Ok(StateFrame::new(session.id(), &obs, agent_cell(session)))
}

fn internal(id: &str, e: Error) -> ErrorFrame {
    ErrorFrame::new(Some(id), "internal", e.to_string())
}

fn act(session: &mut TeleopSession, action: &WireAction) -> Result<StateFrame, ErrorFrame> {
    let id = session.id().to_string();
    let grid = session.env().as_navgrid().is_some();
    let action = action
        .to_action(grid)
        .ok_or_else(|| ErrorFrame::new(Some(&id), "bad-action", format!("unrecognised action {action:?}")))?;
    match session.submit(action) {
        Ok(sub) => {
            let mut frame = StateFrame::new(&id, &sub.observation, agent_cell(session));
            frame.label = Some(WireAction::from(&sub.label));
            frame.executed = Some(WireAction::from(&sub.executed));
            Ok(frame)
        }
        Err(Error::Contract(m)) => Err(ErrorFrame::new(Some(&id), "episode-done", m)),
        Err(Error::InvalidParameter(m)) => Err(ErrorFrame::new(Some(&id), "bad-action", m)),
        Err(e) => Err(internal(&id, e)),
    }
}

fn end(session: TeleopSession, data_dir: &std::path::Path) -> Result<EndedFrame, ErrorFrame> {
    let id = session.id().to_string();
    let (labels, executed) = session.finish().map_err(|e| internal(&id, e))?;
    let fail = |e: std::io::Error| ErrorFrame::new(Some(&id), "internal", e.to_string());
    std::fs::create_dir_all(data_dir).map_err(fail)?;
    let dataset = data_dir.join(format!("{id}.demos"));
    let executed_path = data_dir.join(format!("{id}.executed.demos"));
    labels.save(&dataset).map_err(|e| internal(&id, e))?;
    executed.save(&executed_path).map_err(|e| internal(&id, e))?;
    Ok(EndedFrame {
        v: PROTOCOL_VERSION,
        session: id,
        pairs: labels.num_pairs(),
        trajectories: labels.trajectories().len(),
        dataset: dataset.display().to_string(),
        executed: executed_path.display().to_string(),
    })
}

async fn session_task(
    mut session: TeleopSession,
    mut commands: mpsc::Receiver<Command>,
    frames: broadcast::Sender<String>,
    data_dir: PathBuf,
) {
    let push = |f: &Result<StateFrame, ErrorFrame>| {
        if let Ok(frame) = f {
            // No subscribers is fine.
            let _ = frames.send(ServerFrame::State(frame.clone()).to_json());
        }
    };
    while let Some(cmd) = commands.recv().await {
        match cmd {
            Command::Observe(reply) => {
                let _ = reply.send(frame_of(&session));
            }
            Command::Act(action, reply) => {
                let out = act(&mut session, &action);
                push(&out);
                let _ = reply.send(out);
            }
            Command::Reset(reply) => {
                let out = match session.reset() {
                    Ok(_) => frame_of(&session),
                    Err(e) => Err(internal(session.id(), e)),
                };
                push(&out);
                let _ = reply.send(out);
            }
            Command::End(reply) => {
                let out = end(session, &data_dir);
                if let Ok(f) = &out {
                    let _ = frames.send(ServerFrame::Ended(f.clone()).to_json());
                }
                let _ = reply.send(out);
                return;
            }
        }
    }
}

fn unknown(id: &str) -> ErrorFrame {
    ErrorFrame::new(Some(id), "unknown-session", format!("no session {id:?}"))
}

async fn request<T>(
    state: &AppState,
    id: &str,
    make: impl FnOnce(oneshot::Sender<Result<T, ErrorFrame>>) -> Command,
) -> Result<T, ErrorFrame> {
    let handle = state.handle(id).ok_or_else(|| unknown(id))?;
    let (tx, rx) = oneshot::channel();
    handle.commands.send(make(tx)).await.map_err(|_| unknown(id))?;
    rx.await.map_err(|_| unknown(id))?
}

fn status(code: &str) -> StatusCode {
    match code {
        "unknown-session" => StatusCode::NOT_FOUND,
        "episode-done" => StatusCode::CONFLICT,
        "internal" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn reply<T>(out: Result<T, ErrorFrame>, wrap: impl FnOnce(T) -> ServerFrame) -> Response {
    match out {
        Ok(v) => Json(wrap(v)).into_response(),
        Err(e) => (status(&e.code), Json(ServerFrame::Error(e))).into_response(),
    }
}

async fn index() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "v": PROTOCOL_VERSION, "service": "rlab demonstrations" }))
}

async fn create(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> Response {
    let bad = |m: String| reply::<()>(Err(ErrorFrame::new(None, "bad-frame", m)), |_| unreachable!());
    let Some(mode) = mode_from_name(body.mode.as_deref()) else {
        return bad(format!("unknown mode {:?} (expected demonstrate, dagger-correct)", body.mode.unwrap_or_default()));
    };
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let learner = if mode == TeleopMode::Correct { state.config.learner.clone() } else { None };
    let beta = body.beta.unwrap_or(if mode == TeleopMode::Correct { DEFAULT_BETA } else { 1.0 });
    let session = match TeleopSession::new(id.clone(), state.config.env.clone(), mode, learner, beta, body.seed) {
        Ok(s) => s,
        Err(e) => return bad(e.to_string()),
    };
    let frame = match frame_of(&session) {
        Ok(f) => f,
        Err(e) => return reply::<()>(Err(e), |_| unreachable!()),
    };
    let grid = session.env().as_navgrid().map(|env| {
        let g = env.grid();
        let obstacles = (0..g.num_cells()).map(|i| g.cell(i)).filter(|&c| !g.is_free(c)).collect();
        GridLayout {
            width: g.width(),
            height: g.height(),
            goal: g.goal(),
            obstacles,
        }
    });
    let actions = match session.action_space() {
        ActionSpace::Discrete(n) => Some(n),
        ActionSpace::Continuous { .. } => None,
    };
    let (tx, rx) = mpsc::channel(64);
    let (frames, _) = broadcast::channel(256);
    tokio::spawn(session_task(session, rx, frames.clone(), state.config.data_dir.clone()));
    state
        .sessions
        .lock()
        .expect("session table poisoned")
        .insert(id.clone(), Handle { commands: tx, frames });
    Json(SessionCreated {
        v: PROTOCOL_VERSION,
        session: id,
        mode: mode.name().to_string(),
        actions,
        grid,
        frame,
    })
    .into_response()
}

async fn observe(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    reply(request(&state, &id, Command::Observe).await, ServerFrame::State)
}

#[derive(serde::Deserialize)]
struct ActionBody {
    action: WireAction,
}

async fn submit(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<ActionBody>) -> Response {
    reply(request(&state, &id, |tx| Command::Act(body.action, tx)).await, ServerFrame::State)
}

async fn reset(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    reply(request(&state, &id, Command::Reset).await, ServerFrame::State)
}

async fn finish(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let out = request(&state, &id, Command::End).await;
    if out.is_ok() {
        state.sessions.lock().expect("session table poisoned").remove(&id);
    }
    reply(out, ServerFrame::Ended)
}

async fn socket(State(state): State<Arc<AppState>>, Path(id): Path<String>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream(state, id, socket))
}

fn text(frame: &ServerFrame) -> Message {
    Message::Text(frame.to_json().into())
}

async fn stream(state: Arc<AppState>, id: String, socket: WebSocket) {
    let (mut sink, mut incoming) = socket.split();
    let Some(handle) = state.handle(&id) else {
        let _ = sink.send(text(&ServerFrame::Error(unknown(&id)))).await;
        let _ = sink.close().await;
        return;
    };
    // Subscribe before reading the current state so no frame falls between.
    let mut frames = handle.frames.subscribe();
    match request(&state, &id, Command::Observe).await {
        Ok(f) => {
            if sink.send(text(&ServerFrame::State(f))).await.is_err() {
                return;
            }
        }
        Err(e) => {
            let _ = sink.send(text(&ServerFrame::Error(e))).await;
            return;
        }
    }
    loop {
        tokio::select! {
            pushed = frames.recv() => match pushed {
                Ok(json) => {
                    let ended = json.contains("\"type\":\"ended\"");
                    if sink.send(Message::Text(json.into())).await.is_err() || ended {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    let e = ErrorFrame::new(Some(&id), "internal", format!("{n} frames dropped for a slow client"));
                    if sink.send(text(&ServerFrame::Error(e))).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = incoming.next() => {
                let Some(Ok(msg)) = msg else { break };
                let body = match msg {
                    Message::Text(t) => t.as_str().to_string(),
                    Message::Close(_) => break,
                    _ => continue,
                };
                // Successful commands answer through the broadcast; only
                // errors go straight back to the sender.
                if let Err(e) = handle_frame(&state, &id, &body).await {
                    if sink.send(text(&ServerFrame::Error(e))).await.is_err() {
                        break;
                    }
                }
            }
        }
    }
}

async fn handle_frame(state: &AppState, id: &str, body: &str) -> Result<(), ErrorFrame> {
    let frame: ClientFrame =
        serde_json::from_str(body).map_err(|e| ErrorFrame::new(Some(id), "bad-frame", e.to_string()))?;
    if let Some(v) = frame.v.filter(|&v| v != PROTOCOL_VERSION) {
        return Err(ErrorFrame::new(
            Some(&frame.session),
            "unsupported-version",
            format!("frame version {v}, service speaks {PROTOCOL_VERSION}"),
        ));
    }
    if frame.session != id {
        return Err(unknown(&frame.session));
    }
    match (frame.kind.as_deref().unwrap_or("action"), frame.action) {
        ("action", Some(a)) => request(state, id, |tx| Command::Act(a, tx)).await.map(drop),
        ("action", None) => Err(ErrorFrame::new(Some(id), "bad-frame", "action frame without an action")),
        ("reset", _) => request(state, id, Command::Reset).await.map(drop),
        (other, _) => Err(ErrorFrame::new(Some(id), "bad-frame", format!("unknown frame type {other:?}"))),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(observe))
        .route("/sessions/{id}/action", post(submit))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/end", post(finish))
        .route("/sessions/{id}/ws", get(socket))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    axum::serve(listener, router(AppState::new(config))).await
}
