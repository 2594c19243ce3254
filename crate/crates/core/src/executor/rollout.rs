use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExecutorError;
use crate::embeddings::{FrameStore, SceneState};
use crate::geometry::Pose;
use crate::graph::{DsId, FrameKey, Gripper, PartId};

pub const ROLLOUT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalySource {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum Event {
    #[serde(rename_all = "camelCase")]
    Switch { tau: u32, from: PartId, to: PartId, ds: DsId },
    /// The active part ran out and its split suffix took over.
    #[serde(rename_all = "camelCase")]
    Continue { tau: u32, from: PartId, to: PartId },
    #[serde(rename_all = "camelCase")]
    LowConfidence { tau: u32, ds: DsId },
    #[serde(rename_all = "camelCase")]
    Anomaly { tau: u32, part: PartId, source: AnomalySource, score: f64 },
    #[serde(rename_all = "camelCase")]
    Branch { tau: u32, ds: DsId, root: PartId, new_part: PartId },
    #[serde(rename_all = "camelCase")]
    Refine { tau: u32, part: PartId, trial: u32 },
    #[serde(rename_all = "camelCase")]
    DemonstrationRejected { tau: u32, reason: String },
    #[serde(rename_all = "camelCase")]
    TrialSaved { part: PartId, trial: u32, steps: u32 },
    #[serde(rename_all = "camelCase")]
    Paused { tau: u32 },
    #[serde(rename_all = "camelCase")]
    Resumed { tau: u32 },
    #[serde(rename_all = "camelCase")]
    Aborted { tau: u32 },
    #[serde(rename_all = "camelCase")]
    Done { tau: u32, part: PartId },
}

impl Event {
    pub fn is_switch(&self) -> bool {
        matches!(self, Event::Switch { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TickRecord {
    pub tick: u64,
    pub tau: u32,
    pub part: PartId,
    pub pose: Pose,
    pub gripper: Gripper,
    pub frame_key: FrameKey,
    pub scores: Vec<(PartId, f64)>,
    pub a_p: bool,
    pub anomaly_score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum OutcomeStatus {
    Done,
    /// Ended by a branch demonstration, which itself completes the variant.
    Taught,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub status: OutcomeStatus,
    pub final_part: PartId,
    pub final_tau: u32,
    /// Parts traversed from the initial part to the final one.
    pub executed_variant: Vec<PartId>,
    pub ticks: u64,
}

/// Recorded execution trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub ticks: Vec<TickRecord>,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    pub scene: SceneState,
    pub seed: u64,
    pub expected_variant: Option<Vec<PartId>>,
    /// Observations of every recorded step, keyed like the trial steps.
    pub frames: FrameStore,
}

impl Rollout {
    pub fn switch_events(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.is_switch())
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.ticks.iter().map(|t| t.pose).collect()
    }

    /// Pose recorded at each task time, in order (the last tick per task time).
    pub fn step_poses(&self) -> Vec<(u32, Pose)> {
        let mut out: Vec<(u32, Pose)> = Vec::new();
        for t in &self.ticks {
            match out.last_mut() {
                Some(last) if last.0 == t.tau => last.1 = t.pose,
                _ => out.push((t.tau, t.pose)),
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Footer {
    footer: bool,
    version: u32,
    outcome: Outcome,
    events: Vec<Event>,
    scene: SceneState,
    seed: u64,
    #[serde(default)]
    expected_variant: Option<Vec<PartId>>,
}

/// The rollout as JSON lines: one record per tick, then a footer record.
pub fn rollout_jsonl(rollout: &Rollout) -> String {
    let mut out = String::new();
    for t in &rollout.ticks {
        out += &serde_json::to_string(t).expect("tick records serialize");
        out.push('\n');
    }
    let footer = Footer {
        footer: true,
        version: ROLLOUT_VERSION,
        outcome: rollout.outcome.clone(),
        events: rollout.events.clone(),
        scene: rollout.scene.clone(),
        seed: rollout.seed,
        expected_variant: rollout.expected_variant.clone(),
    };
    out += &serde_json::to_string(&footer).expect("footer serializes");
    out.push('\n');
    out
}

/// Writes [`rollout_jsonl`] to `path`. Frames go to a sibling `.swem` file
/// when there are any.
pub fn write_rollout(rollout: &Rollout, path: &Path) -> Result<(), ExecutorError> {
    let err = |e: std::io::Error| ExecutorError::Format { path: path.display().to_string(), message: e.to_string() };
    std::fs::write(path, rollout_jsonl(rollout)).map_err(err)?;
    if !rollout.frames.is_empty() {
        rollout.frames.save_all(&path.with_extension("swem"))?;
    }
    Ok(())
}

pub fn read_rollout(path: &Path) -> Result<Rollout, ExecutorError> {
    let fmt =
        |line: usize, message: String| ExecutorError::Format { path: format!("{}:{line}", path.display()), message };
    let file = std::fs::File::open(path).map_err(|e| fmt(0, e.to_string()))?;
    let mut ticks = Vec::new();
    let mut footer: Option<Footer> = None;
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| fmt(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if footer.is_some() {
            return Err(fmt(i + 1, "record after footer".into()));
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| fmt(i + 1, e.to_string()))?;
        if value.get("footer").is_some() {
            let f: Footer = serde_json::from_value(value).map_err(|e| fmt(i + 1, e.to_string()))?;
            if f.version != ROLLOUT_VERSION {
                return Err(fmt(i + 1, format!("unsupported rollout version {}", f.version)));
            }
            footer = Some(f);
        } else {
            ticks.push(serde_json::from_value(value).map_err(|e| fmt(i + 1, e.to_string()))?);
        }
    }
    let footer = footer.ok_or_else(|| fmt(0, "missing footer record".into()))?;
    let swem = path.with_extension("swem");
    let frames = if swem.exists() { FrameStore::load(&swem)? } else { FrameStore::new() };
    Ok(Rollout {
        ticks,
        events: footer.events,
        outcome: footer.outcome,
        scene: footer.scene,
        seed: footer.seed,
        expected_variant: footer.expected_variant,
        frames,
    })
}
