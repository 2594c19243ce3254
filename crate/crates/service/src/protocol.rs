//! Messages pushed on a session stream. Every message is one WebSocket text
//! frame holding a JSON object with `version`, a per-session `seq` and a
//! `type` tag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use switchboard_core::embeddings::{SceneObject, SceneState};
use switchboard_core::executor::{Event, Outcome, Phase, TickRecord};
use switchboard_core::geometry::Pose;
use switchboard_core::graph::{Gripper, PartId};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StreamMessage {
    pub version: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub body: StreamBody,
}

impl StreamMessage {
    /// Finished and error messages end the stream.
    pub fn is_terminal(&self) -> bool {
        matches!(self.body, StreamBody::Finished { .. } | StreamBody::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StreamBody {
    /// First message on every connection: where the session stands now.
    #[serde(rename_all = "camelCase")]
    Snapshot {
        status: SessionStatus,
        last_tick: Option<TickMessage>,
    },
    Tick(TickMessage),
    #[serde(rename_all = "camelCase")]
    Event {
        tick: u64,
        name: String,
        event: Event,
    },
    #[serde(rename_all = "camelCase")]
    Finished {
        outcome: Outcome,
        rollout: usize,
    },
    #[serde(rename_all = "camelCase")]
    Error {
        code: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneSnapshot {
    pub factors: BTreeMap<String, String>,
    pub objects: Vec<SceneObject>,
}

impl From<&SceneState> for SceneSnapshot {
    fn from(scene: &SceneState) -> Self {
        Self { factors: scene.factors.clone(), objects: scene.objects() }
    }
}

/// What the eye-in-hand camera sees: the label hit by each patch, row-major
/// over a `grid × grid` layout, empty for the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub grid: usize,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TickMessage {
    pub tick: u64,
    pub tau: u32,
    pub part: PartId,
    pub robot_pose: Pose,
    pub gripper: Gripper,
    pub scene: SceneSnapshot,
    pub patch_grid: Option<PatchGrid>,
    /// Score per candidate part.
    pub scores: Vec<(PartId, f64)>,
    pub anomaly_score: f64,
    pub a_p: bool,
}

impl TickMessage {
    pub fn new(record: &TickRecord, scene: SceneSnapshot, patch_grid: Option<PatchGrid>) -> Self {
        Self {
            tick: record.tick,
            tau: record.tau,
            part: record.part,
            robot_pose: record.pose,
            gripper: record.gripper,
            scene,
            patch_grid,
            scores: record.scores.clone(),
            anomaly_score: record.anomaly_score,
            a_p: record.a_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionStatus {
    pub session_id: String,
    pub task_id: String,
    pub scene_id: String,
    pub phase: Phase,
    pub tick: u64,
    pub tau: u32,
    pub active_part: PartId,
    pub pending_anomaly: bool,
    pub finished: bool,
    pub outcome: Option<Outcome>,
    pub error: Option<String>,
}

/// Stream name of an executor event.
pub fn event_name(event: &Event) -> &'static str {
    match event {
        Event::Switch { .. } => "switch",
        Event::Continue { .. } => "continue",
        Event::LowConfidence { .. } => "low-confidence",
        Event::Anomaly { .. } => "anomaly-prompt",
        Event::Branch { .. } => "branch-created",
        Event::Refine { .. } => "refined",
        Event::DemonstrationRejected { .. } => "demonstration-rejected",
        Event::TrialSaved { .. } => "trial-saved",
        Event::Paused { .. } => "paused",
        Event::Resumed { .. } => "resumed",
        Event::Aborted { .. } => "aborted",
        Event::Done { .. } => "done",
    }
}
