use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use switchboard_core::embeddings::{SceneState, SyntheticEncoder, SyntheticProvider};
use switchboard_core::executor::{rollout_jsonl, AnomalyGate, CommandEntry, Waypoint};
use switchboard_core::graph::PartId;
use switchboard_core::library::load_library;
use switchboard_core::task::{Task, TaskConfig};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::protocol::{SessionStatus, StreamMessage, PROTOCOL_VERSION};
use crate::session::{self, SessionSpec};
use crate::state::{valid_id, AppState, RolloutSummary, TaskEntry, TaskSummary};

/// Holder name shown while a task is checked out for training.
const TRAINING: &str = "training";
const DEFAULT_SCENE: &str = "default";

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/tasks", get(list_tasks).post(create_task))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/scenes", post(add_scene))
        .route("/tasks/{id}/train", post(train_task))
        .route("/tasks/{id}/rollouts", get(list_rollouts))
        .route("/tasks/{id}/rollouts/{n}", get(get_rollout))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/commands", post(post_command))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

/// JSON bodies are parsed by hand so malformed input gets the error envelope.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "version": PROTOCOL_VERSION, "status": "ok" }))
}

async fn list_tasks(State(state): State<AppState>) -> Json<Vec<TaskSummary>> {
    Json(state.lock().tasks.values().map(TaskEntry::summary).collect())
}

async fn get_task(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<TaskSummary>, ApiError> {
    Ok(Json(state.lock().task(&id)?.summary()))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateTask {
    id: String,
    #[serde(default)]
    scene: Option<SceneState>,
    #[serde(default)]
    scene_id: Option<String>,
    #[serde(default)]
    demonstration: Option<Vec<Waypoint>>,
    /// Library directory on the server's filesystem.
    #[serde(default)]
    library: Option<PathBuf>,
    #[serde(default)]
    config: Option<TaskConfig>,
}

async fn create_task(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateTask = parse(&body)?;
    if !valid_id(&req.id) {
        return Err(ApiError::BadRequest(format!("invalid task id {:?}", req.id)));
    }
    if state.lock().tasks.contains_key(&req.id) {
        return Err(ApiError::TaskExists(req.id));
    }
    let scene_id = req.scene_id.clone().unwrap_or_else(|| DEFAULT_SCENE.into());
    if !valid_id(&scene_id) {
        return Err(ApiError::BadRequest(format!("invalid scene id {scene_id:?}")));
    }
    let id = req.id.clone();
    let scene = req.scene.clone();
    let task = blocking(move || -> Result<Task, ApiError> {
        match (req.library, req.scene, req.demonstration) {
            (Some(root), None, None) => {
                let mut task = load_library(&root).map_err(|e| ApiError::BadRequest(e.to_string()))?;
                if let Some(config) = req.config {
                    task.config = config;
                }
                Ok(task)
            }
            (None, Some(scene), Some(demo)) => {
                let config = req.config.unwrap_or_default();
                let provider = SyntheticProvider::new(SyntheticEncoder::new(config.encoder));
                let mut task = Task::from_waypoints(&req.id, &demo, &scene, &provider, config)
                    .map_err(|e| ApiError::BadRequest(e.to_string()))?;
                task.train().map_err(|e| ApiError::Internal(e.to_string()))?;
                Ok(task)
            }
            _ => Err(ApiError::BadRequest("give either a library or a scene with a demonstration".into())),
        }
    })
    .await??;
    let mut registry = state.lock();
    if registry.tasks.contains_key(&id) {
        return Err(ApiError::TaskExists(id));
    }
    let mut entry = TaskEntry::new(&id, task);
    if let Some(scene) = scene {
        entry.scenes.insert(scene_id, scene);
    }
    state.persist(&id, &entry)?;
    let summary = entry.summary();
    registry.tasks.insert(id, entry);
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct AddScene {
    #[serde(default)]
    id: Option<String>,
    scene: SceneState,
}

async fn add_scene(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: AddScene = parse(&body)?;
    let mut registry = state.lock();
    let entry = registry.task(&id)?;
    let scene_id = req.id.unwrap_or_else(|| format!("scene-{}", entry.scenes.len()));
    if !valid_id(&scene_id) {
        return Err(ApiError::BadRequest(format!("invalid scene id {scene_id:?}")));
    }
    entry.scenes.insert(scene_id.clone(), req.scene);
    state.persist(&id, entry)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": scene_id }))).into_response())
}

fn check_out(entry: &mut TaskEntry, id: &str, holder: &str) -> Result<Task, ApiError> {
    match entry.task.take() {
        Some(task) => {
            entry.summary.session = Some(holder.to_string());
            Ok(task)
        }
        None => {
            Err(ApiError::TaskBusy { task: id.to_string(), session: entry.summary.session.clone().unwrap_or_default() })
        }
    }
}

async fn train_task(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<TaskSummary>, ApiError> {
    let mut task = check_out(state.lock().task(&id)?, &id, TRAINING)?;
    let (task, result) = blocking(move || {
        let r = task.train();
        (task, r)
    })
    .await?;
    let mut registry = state.lock();
    let entry = registry.task(&id)?;
    entry.task = Some(task);
    entry.summary.session = None;
    entry.refresh();
    result.map_err(|e| ApiError::Internal(e.to_string()))?;
    state.persist(&id, entry)?;
    Ok(Json(entry.summary()))
}

async fn list_rollouts(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<Vec<RolloutSummary>>, ApiError> {
    let mut registry = state.lock();
    let entry = registry.task(&id)?;
    let out = entry
        .rollouts
        .iter()
        .enumerate()
        .map(|(index, r)| RolloutSummary {
            index,
            session_id: r.session_id.clone(),
            scene_id: r.scene_id.clone(),
            outcome: r.rollout.outcome.clone(),
            ticks: r.rollout.ticks.len(),
            events: r.rollout.events.len(),
        })
        .collect();
    Ok(Json(out))
}

/// The rollout as JSON lines, identical to the CLI's rollout files.
async fn get_rollout(
    State(state): State<AppState>,
    Path((id, n)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let mut registry = state.lock();
    let entry = registry.task(&id)?;
    let stored = entry.rollouts.get(n).ok_or(ApiError::UnknownRollout(n))?;
    let text = rollout_jsonl(&stored.rollout);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct CreateSession {
    task_id: String,
    scene_id: String,
    #[serde(default)]
    gate: Option<AnomalyGate>,
    #[serde(default)]
    seed: Option<u64>,
    /// Scripted entries queued before the first tick.
    #[serde(default)]
    commands: Vec<CommandEntry>,
    #[serde(default)]
    expected_variant: Option<Vec<PartId>>,
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse(&body)?;
    let mut registry = state.lock();
    let session_id = format!("s{}", registry.next_session + 1);
    let entry = registry.task(&req.task_id)?;
    let scene = entry.scenes.get(&req.scene_id).cloned().ok_or_else(|| ApiError::UnknownScene(req.scene_id.clone()))?;
    let task = check_out(entry, &req.task_id, &session_id)?;
    registry.next_session += 1;
    let spec = SessionSpec {
        task_id: req.task_id,
        scene_id: req.scene_id,
        scene,
        commands: req.commands,
        expected_variant: req.expected_variant,
        gate: req.gate,
        seed: req.seed,
    };
    let session = session::start(&state, session_id.clone(), task, spec);
    let status = session.status();
    registry.sessions.insert(session_id, session);
    Ok((StatusCode::CREATED, Json(status)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionStatus>, ApiError> {
    Ok(Json(state.lock().session(&id)?.status()))
}

#[derive(Serialize)]
struct CommandAck {
    version: u32,
    accepted: bool,
    duplicate: bool,
}

async fn post_command(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let entry: CommandEntry = parse(&body)?;
    let session = state.lock().session(&id)?;
    let accepted = session.submit(entry)?;
    let ack = CommandAck { version: PROTOCOL_VERSION, accepted, duplicate: !accepted };
    Ok((StatusCode::ACCEPTED, Json(ack)).into_response())
}

#[derive(Deserialize)]
struct StreamQuery {
    /// Replay the log from this sequence number before going live.
    from: Option<u64>,
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let session = state.lock().session(&id)?;
    Ok(ws.on_upgrade(move |socket| async move {
        if let Err(e) = pump(socket, &session, q.from).await {
            tracing::debug!(session = %session.id, error = %e, "stream closed");
        }
    }))
}

async fn send(socket: &mut WebSocket, msg: &StreamMessage) -> Result<(), axum::Error> {
    let text = serde_json::to_string(msg).expect("stream messages serialize");
    socket.send(Message::Text(text.into())).await
}

async fn pump(mut socket: WebSocket, session: &session::Session, from: Option<u64>) -> Result<(), axum::Error> {
    let mut sub = session.subscribe(from);
    let mut next = sub.snapshot.seq;
    send(&mut socket, &sub.snapshot).await?;
    for msg in &sub.backlog {
        send(&mut socket, msg).await?;
    }
    if sub.ended {
        return socket.send(Message::Close(None)).await;
    }
    loop {
        let batch = tokio::select! {
            received = sub.live.recv() => match received {
                Ok(msg) => vec![msg],
                // fell behind the broadcast buffer: fill the gap from the log
                Err(RecvError::Lagged(_)) => session.messages_from(next),
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return Ok(()),
                Some(Ok(_)) => continue,
            },
        };
        for msg in batch {
            if msg.seq < next {
                continue;
            }
            next = msg.seq + 1;
            send(&mut socket, &msg).await?;
            if msg.is_terminal() {
                return socket.send(Message::Close(None)).await;
            }
        }
    }
    Ok(())
}
