use std::collections::HashSet;
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex, MutexGuard};

use switchboard_core::embeddings::{SceneState, SyntheticEncoder, SyntheticProvider};
use switchboard_core::executor::{
    AnomalyGate, Command, CommandEntry, CommandQueue, Episode, ExecutorError, Phase, Rollout, TickStatus,
};
use switchboard_core::graph::PartId;
use switchboard_core::task::Task;
use tokio::sync::broadcast;

use crate::error::ApiError;
use crate::protocol::{
    event_name, PatchGrid, SceneSnapshot, SessionStatus, StreamBody, StreamMessage, TickMessage, PROTOCOL_VERSION,
};
use crate::state::{AppState, StoredRollout};

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// One execution of a task on a scene. The session thread is the only writer
/// of the task while it runs; clients reach it through the command channel.
pub(crate) struct Session {
    pub id: String,
    commands: Mutex<Option<Sender<CommandEntry>>>,
    status: Mutex<SessionStatus>,
    last_tick: Mutex<Option<TickMessage>>,
    log: Mutex<Vec<StreamMessage>>,
    live: broadcast::Sender<StreamMessage>,
    keys: Mutex<HashSet<String>>,
}

/// Stream backlog and live feed for one subscriber.
pub(crate) struct Subscription {
    pub snapshot: StreamMessage,
    pub backlog: Vec<StreamMessage>,
    pub live: broadcast::Receiver<StreamMessage>,
    /// The log already ends with the final message.
    pub ended: bool,
}

impl Session {
    pub fn status(&self) -> SessionStatus {
        lock(&self.status).clone()
    }

    fn publish(&self, body: StreamBody) {
        let mut log = lock(&self.log);
        let msg = StreamMessage { version: PROTOCOL_VERSION, seq: log.len() as u64, body };
        log.push(msg.clone());
        let _ = self.live.send(msg);
    }

    /// Messages from `from` on (none when `from` is absent), then live ones.
    /// The snapshot carries the sequence number of the next message.
    pub fn subscribe(&self, from: Option<u64>) -> Subscription {
        let log = lock(&self.log);
        let live = self.live.subscribe();
        let backlog = from.map(|f| log.iter().skip(f as usize).cloned().collect()).unwrap_or_default();
        let snapshot = StreamMessage {
            version: PROTOCOL_VERSION,
            seq: log.len() as u64,
            body: StreamBody::Snapshot { status: self.status(), last_tick: lock(&self.last_tick).clone() },
        };
        let ended = log.last().is_some_and(|m| m.is_terminal());
        Subscription { snapshot, backlog, live, ended }
    }

    pub fn messages_from(&self, from: u64) -> Vec<StreamMessage> {
        lock(&self.log).iter().skip(from as usize).cloned().collect()
    }

    /// Queues a client command. Returns false for a repeated idempotency key.
    pub fn submit(&self, entry: CommandEntry) -> Result<bool, ApiError> {
        let status = self.status();
        if status.finished {
            return Err(ApiError::SessionFinished(self.id.clone()));
        }
        if entry.at_tick.is_none() && status.phase != Phase::AwaitingUser {
            match entry.command {
                Command::Approve => return Err(ApiError::NoPendingAnomaly("approve")),
                Command::Demonstrate { .. } => return Err(ApiError::NoPendingAnomaly("demonstrate")),
                _ => {}
            }
        }
        if let Some(key) = &entry.idempotency_key {
            if !lock(&self.keys).insert(key.clone()) {
                return Ok(false);
            }
        }
        let sender = lock(&self.commands);
        match sender.as_ref().map(|s| s.send(entry)) {
            Some(Ok(())) => Ok(true),
            _ => Err(ApiError::SessionFinished(self.id.clone())),
        }
    }
}

pub(crate) struct SessionSpec {
    pub task_id: String,
    pub scene_id: String,
    pub scene: SceneState,
    pub commands: Vec<CommandEntry>,
    pub expected_variant: Option<Vec<PartId>>,
    pub gate: Option<AnomalyGate>,
    pub seed: Option<u64>,
}

/// Creates the session and starts its executor thread on `task`.
pub(crate) fn start(state: &AppState, id: String, task: Task, spec: SessionSpec) -> Arc<Session> {
    let (tx, rx) = std::sync::mpsc::channel();
    let (live, _) = broadcast::channel(1024);
    let status = SessionStatus {
        session_id: id.clone(),
        task_id: spec.task_id.clone(),
        scene_id: spec.scene_id.clone(),
        phase: Phase::Replaying,
        tick: 0,
        tau: 0,
        active_part: PartId(0),
        pending_anomaly: false,
        finished: false,
        outcome: None,
        error: None,
    };
    let session = Arc::new(Session {
        id,
        commands: Mutex::new(Some(tx)),
        status: Mutex::new(status),
        last_tick: Mutex::new(None),
        log: Mutex::new(Vec::new()),
        live,
        keys: Mutex::new(HashSet::new()),
    });
    let (state, handle) = (state.clone(), session.clone());
    std::thread::Builder::new()
        .name(format!("session-{}", session.id))
        .spawn(move || run(state, handle, task, spec, rx))
        .expect("spawn session thread");
    session
}

fn enqueue(episode: &mut Episode<'_>, mut entry: CommandEntry) {
    // live commands act on the tick they arrive at
    if entry.at_tick.is_none() && episode.state().phase == Phase::Replaying {
        entry.at_tick = Some(episode.state().tick);
    }
    episode.queue_mut().push(entry);
}

fn drive(
    session: &Session,
    episode: &mut Episode<'_>,
    rx: &Receiver<CommandEntry>,
    encoder: &SyntheticEncoder,
    interval: std::time::Duration,
) -> Result<(), ExecutorError> {
    let (mut ticks_seen, mut events_seen) = (0, 0);
    let scene = SceneSnapshot::from(episode.render_scene());
    loop {
        while let Ok(entry) = rx.try_recv() {
            enqueue(episode, entry);
        }
        let status = episode.tick()?;
        for record in &episode.ticks()[ticks_seen..] {
            let grid = encoder.config().grid;
            let cells = encoder.patch_labels(episode.render_scene(), &record.pose);
            let msg = TickMessage::new(record, scene.clone(), Some(PatchGrid { grid, cells }));
            *lock(&session.last_tick) = Some(msg.clone());
            session.publish(StreamBody::Tick(msg));
        }
        ticks_seen = episode.ticks().len();
        for event in &episode.events()[events_seen..] {
            let body =
                StreamBody::Event { tick: episode.state().tick, name: event_name(event).into(), event: event.clone() };
            session.publish(body);
        }
        events_seen = episode.events().len();
        {
            let s = episode.state();
            let mut st = lock(&session.status);
            st.phase = s.phase;
            st.tick = s.tick;
            st.tau = s.tau;
            st.active_part = s.active;
            st.pending_anomaly = s.pending.is_some();
        }
        match status {
            TickStatus::Running => {
                if !interval.is_zero() {
                    std::thread::sleep(interval);
                }
            }
            TickStatus::Finished => return Ok(()),
            TickStatus::NeedsInput => {
                if episode.queue_mut().has_timed() {
                    episode.idle_tick();
                } else {
                    let entry = rx.recv().map_err(|_| ExecutorError::Deadlock { tick: episode.state().tick })?;
                    enqueue(episode, entry);
                }
            }
        }
    }
}

fn execute(
    session: &Session,
    task: &mut Task,
    spec: &SessionSpec,
    rx: &Receiver<CommandEntry>,
    interval: std::time::Duration,
) -> Result<Rollout, ExecutorError> {
    let encoder = SyntheticEncoder::new(task.config.encoder);
    let provider = SyntheticProvider::new(encoder.clone());
    let queue = CommandQueue::from_entries(spec.commands.clone());
    let mut episode = Episode::new(task, &provider, &spec.scene, queue)?;
    if let Some(v) = &spec.expected_variant {
        episode = episode.with_expected_variant(v.clone());
    }
    drive(session, &mut episode, rx, &encoder, interval)?;
    Ok(episode.into_rollout())
}

fn run(state: AppState, session: Arc<Session>, mut task: Task, spec: SessionSpec, rx: Receiver<CommandEntry>) {
    let saved = (task.config.exec.gate, task.config.exec.sim.seed);
    task.config.exec.gate = spec.gate.unwrap_or(saved.0);
    task.config.exec.sim.seed = spec.seed.unwrap_or(saved.1);
    let result = execute(&session, &mut task, &spec, &rx, state.config.tick_interval);
    (task.config.exec.gate, task.config.exec.sim.seed) = saved;
    *lock(&session.commands) = None;
    let mut registry = state.lock();
    let Some(entry) = registry.tasks.get_mut(&spec.task_id) else { return };
    entry.task = Some(task);
    entry.summary.session = None;
    entry.refresh();
    let final_body = match result {
        Ok(rollout) => {
            let outcome = rollout.outcome.clone();
            entry.rollouts.push(StoredRollout {
                session_id: session.id.clone(),
                scene_id: spec.scene_id.clone(),
                rollout,
            });
            let index = entry.rollouts.len() - 1;
            lock(&session.status).outcome = Some(outcome.clone());
            StreamBody::Finished { outcome, rollout: index }
        }
        Err(e) => {
            tracing::warn!(session = %session.id, error = %e, "session failed");
            lock(&session.status).error = Some(e.to_string());
            StreamBody::Error { code: "executor".into(), message: e.to_string() }
        }
    };
    if let Err(e) = state.persist(&spec.task_id, entry) {
        tracing::warn!(task = %spec.task_id, error = %e, "could not persist task");
    }
    drop(registry);
    {
        let mut st = lock(&session.status);
        st.finished = true;
        st.phase = Phase::Done;
    }
    session.publish(final_body);
}
