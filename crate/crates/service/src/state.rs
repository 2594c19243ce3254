use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use switchboard_core::embeddings::SceneState;
use switchboard_core::executor::Rollout;
use switchboard_core::graph::{DecisionState, DsId, Edge, ModelState, PartId};
use switchboard_core::library::{load_library, save_library};
use switchboard_core::switcher::Method;
use switchboard_core::task::Task;

use crate::error::ApiError;
use crate::session::Session;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Tasks are persisted here as libraries (one directory per task) and
    /// reloaded at startup.
    pub data_dir: Option<PathBuf>,
    /// Wall-clock delay between replay ticks; zero runs as fast as possible.
    pub tick_interval: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartSummary {
    pub id: PartId,
    pub offset: u32,
    pub trials: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelSummary {
    pub ds: DsId,
    pub status: ModelState,
    pub method: Option<Method>,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskSummary {
    pub id: String,
    pub parts: Vec<PartSummary>,
    pub edges: Vec<Edge>,
    pub decision_states: Vec<DecisionState>,
    pub models: Vec<ModelSummary>,
    pub scenes: Vec<String>,
    pub rollouts: usize,
    /// Session currently holding the task.
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RolloutSummary {
    pub index: usize,
    pub session_id: String,
    pub scene_id: String,
    pub outcome: switchboard_core::executor::Outcome,
    pub ticks: usize,
    pub events: usize,
}

pub(crate) struct StoredRollout {
    pub session_id: String,
    pub scene_id: String,
    pub rollout: Rollout,
}

pub(crate) struct TaskEntry {
    /// Taken by the session that runs on the task.
    pub task: Option<Task>,
    pub summary: TaskSummary,
    pub scenes: BTreeMap<String, SceneState>,
    pub rollouts: Vec<StoredRollout>,
}

fn summarize(id: &str, task: &Task) -> TaskSummary {
    let graph = &task.graph;
    TaskSummary {
        id: id.to_string(),
        parts: graph
            .parts
            .values()
            .map(|p| PartSummary {
                id: p.id,
                offset: p.offset,
                trials: p.trials.len(),
                steps: p.trials.iter().map(|t| t.steps.len()).sum(),
            })
            .collect(),
        edges: graph.edges.clone(),
        decision_states: graph.decision_states.clone(),
        models: graph
            .decision_states
            .iter()
            .map(|d| {
                let model = task.models.models.values().find(|m| m.members.contains(&d.id));
                ModelSummary {
                    ds: d.id,
                    status: d.model,
                    method: model.map(|m| m.method),
                    train_accuracy: model.and_then(|m| m.train_accuracy),
                }
            })
            .collect(),
        scenes: Vec::new(),
        rollouts: 0,
        session: None,
    }
}

impl TaskEntry {
    pub fn new(id: &str, task: Task) -> Self {
        let summary = summarize(id, &task);
        Self { task: Some(task), summary, scenes: BTreeMap::new(), rollouts: Vec::new() }
    }

    pub fn summary(&self) -> TaskSummary {
        let mut s = self.summary.clone();
        s.scenes = self.scenes.keys().cloned().collect();
        s.rollouts = self.rollouts.len();
        s
    }

    pub fn refresh(&mut self) {
        if let Some(task) = &self.task {
            let session = self.summary.session.take();
            self.summary = summarize(&self.summary.id, task);
            self.summary.session = session;
        }
    }
}

#[derive(Default)]
pub(crate) struct Registry {
    pub tasks: BTreeMap<String, TaskEntry>,
    pub sessions: BTreeMap<String, Arc<Session>>,
    pub next_session: u64,
}

impl Registry {
    pub fn task(&mut self, id: &str) -> Result<&mut TaskEntry, ApiError> {
        self.tasks.get_mut(id).ok_or_else(|| ApiError::UnknownTask(id.to_string()))
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions.get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    pub(crate) registry: Arc<Mutex<Registry>>,
    pub(crate) config: Arc<ServiceConfig>,
}

const SCENES_FILE: &str = "scenes.json";

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self { registry: Arc::default(), config: Arc::new(config) }
    }

    /// Creates the state and reloads every task library under the data
    /// directory.
    pub fn load(config: ServiceConfig) -> Result<Self, String> {
        let state = Self::new(config);
        if let Some(dir) = state.config.data_dir.clone() {
            std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| format!("{}: {e}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("manifest.json").is_file())
                .collect();
            entries.sort();
            let mut registry = state.lock();
            for path in entries {
                let id = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                if !valid_id(&id) {
                    continue;
                }
                let task = load_library(&path).map_err(|e| e.to_string())?;
                let mut entry = TaskEntry::new(&id, task);
                if let Ok(text) = std::fs::read_to_string(path.join(SCENES_FILE)) {
                    entry.scenes = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                }
                registry.tasks.insert(id, entry);
            }
        }
        Ok(state)
    }

    pub(crate) fn lock(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Adds a task under `id`; used at startup to preload libraries.
    pub fn insert_task(&self, id: &str, task: Task) -> Result<(), ApiError> {
        if !valid_id(id) {
            return Err(ApiError::BadRequest(format!("invalid task id {id:?}")));
        }
        let mut registry = self.lock();
        if registry.tasks.contains_key(id) {
            return Err(ApiError::TaskExists(id.to_string()));
        }
        let entry = TaskEntry::new(id, task);
        self.persist(id, &entry)?;
        registry.tasks.insert(id.to_string(), entry);
        Ok(())
    }

    pub(crate) fn persist(&self, id: &str, entry: &TaskEntry) -> Result<(), ApiError> {
        let (Some(dir), Some(task)) = (&self.config.data_dir, &entry.task) else {
            return Ok(());
        };
        let root = dir.join(id);
        save_library(task, &root).map_err(|e| ApiError::Internal(e.to_string()))?;
        write_scenes(&root, &entry.scenes)
    }
}

fn write_scenes(root: &Path, scenes: &BTreeMap<String, SceneState>) -> Result<(), ApiError> {
    let text = serde_json::to_string_pretty(scenes).expect("scenes serialize");
    std::fs::write(root.join(SCENES_FILE), text).map_err(|e| ApiError::Internal(e.to_string()))
}
