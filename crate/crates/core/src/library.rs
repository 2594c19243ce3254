//! On-disk task library:
//!
//! ```text
//! <root>/manifest.json        graph topology, decision states, hyperparameters
//! <root>/parts/<id>.jsonl     one line per timestep per trial
//! <root>/embeddings/<id>.swem observations referenced by the part's steps
//! <root>/models/<dsId>.json   trained cluster models
//! ```
//!
//! Time-conditioned novelty detectors are derived data and are refit by
//! [`Task::train`] after loading.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingError, FrameStore};
use crate::geometry::Pose;
use crate::graph::{
    DecisionState, DsId, Edge, FrameKey, Gripper, PartId, SkillPart, TaskGraph, TimeStep, Trial, TrialKind,
};
use crate::switcher::{ModelSet, SwitcherModel};
use crate::task::{Task, TaskConfig};

pub const LIBRARY_FORMAT: &str = "switchboard-library";
pub const LIBRARY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: unsupported library version {version} (expected {LIBRARY_VERSION})")]
    UnsupportedVersion { path: PathBuf, version: u32 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("graph is invalid: {0}")]
    InvalidGraph(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> LibraryError + '_ {
    move |source| LibraryError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl ToString) -> LibraryError {
    LibraryError::Format { path: path.to_path_buf(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub task_id: String,
    pub next_part_id: u32,
    pub next_ds_id: u32,
    pub parts: Vec<PartEntry>,
    pub edges: Vec<Edge>,
    pub decision_states: Vec<DecisionState>,
    pub models: Vec<DsId>,
    pub config: TaskConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PartEntry {
    pub id: PartId,
    pub offset: u32,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialEntry {
    pub index: u32,
    pub kind: TrialKind,
    pub start: u32,
    pub steps: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct StepRecord {
    trial: u32,
    step: u32,
    pose: Pose,
    gripper: Gripper,
    observation: FrameKey,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), LibraryError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err(path))?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| format_err(path, e))?;
    out.write_all(b"\n").map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LibraryError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Writes the task under `root`, replacing any library already there.
pub fn save_library(task: &Task, root: &Path) -> Result<Manifest, LibraryError> {
    let violations = task.graph.validate();
    if !violations.is_empty() {
        return Err(LibraryError::InvalidGraph(format!("{violations:?}")));
    }
    for sub in ["parts", "embeddings", "models"] {
        let dir = root.join(sub);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let graph = &task.graph;
    let mut parts = Vec::new();
    for part in graph.parts.values() {
        let path = root.join("parts").join(format!("{}.jsonl", part.id.0));
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(io_err(&path))?);
        let mut keys = Vec::new();
        for trial in &part.trials {
            for (k, s) in trial.steps.iter().enumerate() {
                let rec = StepRecord {
                    trial: trial.index,
                    step: k as u32,
                    pose: s.pose,
                    gripper: s.gripper,
                    observation: s.observation,
                };
                serde_json::to_writer(&mut out, &rec).map_err(|e| format_err(&path, e))?;
                out.write_all(b"\n").map_err(io_err(&path))?;
                keys.push(s.observation);
            }
        }
        out.flush().map_err(io_err(&path))?;
        task.frames.save(&root.join("embeddings").join(format!("{}.swem", part.id.0)), keys)?;
        parts.push(PartEntry {
            id: part.id,
            offset: part.offset,
            trials: part
                .trials
                .iter()
                .map(|t| TrialEntry { index: t.index, kind: t.kind, start: t.start, steps: t.steps.len() as u32 })
                .collect(),
        });
    }
    for (key, model) in &task.models.models {
        write_json(&root.join("models").join(format!("{}.json", key.0)), &model.to_json())?;
    }
    let manifest = Manifest {
        format: LIBRARY_FORMAT.into(),
        version: LIBRARY_VERSION,
        task_id: graph.task_id.clone(),
        next_part_id: graph.next_part_id,
        next_ds_id: graph.next_ds_id,
        parts,
        edges: graph.edges.clone(),
        decision_states: graph.decision_states.clone(),
        models: task.models.models.keys().copied().collect(),
        config: task.config.clone(),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn read_part(path: &Path, entry: &PartEntry) -> Result<SkillPart, LibraryError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut trials: Vec<Trial> = entry
        .trials
        .iter()
        .map(|t| Trial { index: t.index, kind: t.kind, start: t.start, steps: Vec::with_capacity(t.steps as usize) })
        .collect();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| format_err(path, format!("line {}: {m}", i + 1));
        let rec: StepRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let trial = trials
            .iter_mut()
            .find(|t| t.index == rec.trial)
            .ok_or_else(|| at(format!("unknown trial {}", rec.trial)))?;
        if rec.step as usize != trial.steps.len() {
            return Err(at(format!("step {} out of order in trial {}", rec.step, rec.trial)));
        }
        trial.steps.push(TimeStep { pose: rec.pose, gripper: rec.gripper, observation: rec.observation });
    }
    for (t, e) in trials.iter().zip(&entry.trials) {
        if t.steps.len() != e.steps as usize {
            return Err(format_err(
                path,
                format!("trial {} has {} steps, manifest says {}", t.index, t.steps.len(), e.steps),
            ));
        }
    }
    Ok(SkillPart { id: entry.id, offset: entry.offset, trials })
}

/// Reads a library written by [`save_library`]. Nothing is returned unless
/// every file parses.
pub fn load_library(root: &Path) -> Result<Task, LibraryError> {
    let manifest_path = root.join("manifest.json");
    let value: serde_json::Value = read_json(&manifest_path)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(LIBRARY_FORMAT) => {}
        other => return Err(format_err(&manifest_path, format!("not a task library (format {other:?})"))),
    }
    let version =
        value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| format_err(&manifest_path, "missing version"))?;
    if version != LIBRARY_VERSION as u64 {
        return Err(LibraryError::UnsupportedVersion { path: manifest_path, version: version as u32 });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| format_err(&manifest_path, e))?;

    let mut parts = BTreeMap::new();
    let mut frames = FrameStore::new();
    for entry in &manifest.parts {
        let part = read_part(&root.join("parts").join(format!("{}.jsonl", entry.id.0)), entry)?;
        let swem = root.join("embeddings").join(format!("{}.swem", entry.id.0));
        let store = FrameStore::load(&swem)?;
        for step in part.trials.iter().flat_map(|t| &t.steps) {
            if !store.contains(&step.observation) {
                return Err(format_err(&swem, format!("missing frame {:?}", step.observation)));
            }
        }
        frames.extend(store);
        parts.insert(entry.id, part);
    }
    let mut models = ModelSet::new();
    for key in &manifest.models {
        let path = root.join("models").join(format!("{}.json", key.0));
        let model = SwitcherModel::from_json(read_json(&path)?).map_err(|e| format_err(&path, e))?;
        models.models.insert(*key, model);
    }
    let graph = TaskGraph {
        task_id: manifest.task_id,
        parts,
        edges: manifest.edges,
        decision_states: manifest.decision_states,
        window_length: manifest.config.window_length,
        next_part_id: manifest.next_part_id,
        next_ds_id: manifest.next_ds_id,
    };
    let violations = graph.validate();
    if !violations.is_empty() {
        return Err(format_err(&manifest_path, format!("graph violates invariants: {violations:?}")));
    }
    Ok(Task { graph, frames, models, config: manifest.config })
}
