//! Replay of task graphs in a kinematic simulator: proximity-gated tracking
//! of the active part's reference trajectory, per-tick switcher queries,
//! switch latching, and the user's answers to anomaly events.

mod command;
mod demonstrate;
mod episode;
mod latch;
mod rollout;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::EmbeddingError;
use crate::geometry::{Pose, Workspace};
use crate::graph::{GraphError, PartId};
use crate::switcher::SwitcherError;

pub use command::{Command, CommandEntry, CommandQueue, Waypoint};
pub use demonstrate::{demonstrate, record_trial};
pub use episode::{drive, handle_anomaly, run_episode, AnomalyDecision, Episode, ExecutionState, Phase, TickStatus};
pub use latch::{latch_update, LatchDecision, Tally};
pub use rollout::{
    read_rollout, rollout_jsonl, write_rollout, AnomalySource, Event, Outcome, OutcomeStatus, Rollout, TickRecord,
};

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Switcher(#[from] SwitcherError),
    #[error("sensing failed: {0}")]
    Sensing(#[from] EmbeddingError),
    #[error("committed successor {part} is not eligible at task time {tau}")]
    Eligibility { part: PartId, tau: u32 },
    #[error("awaiting the user at tick {tick} but the command stream is exhausted")]
    Deadlock { tick: u64 },
    #[error("demonstration starts {distance:.4} m from the anomaly pose (limit {limit} m)")]
    RejectedDemonstration { distance: f64, limit: f64 },
    #[error("waypoint {index} is invalid: {reason}")]
    InvalidWaypoint { index: usize, reason: String },
    #[error("demonstration has no waypoints")]
    EmptyDemonstration,
    #[error("operation needs phase {expected}, session is {actual}")]
    InvalidPhase { expected: &'static str, actual: String },
    #[error("episode exceeded {0} ticks")]
    TickLimit(u64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SimConfig {
    /// Attractor proximity gate, meters.
    pub epsilon: f64,
    /// Orientation gate, radians.
    pub angular_gate: f64,
    /// Position step limit, meters per tick.
    pub v_max: f64,
    /// Rotation step limit, radians per tick.
    pub omega_max: f64,
    pub control_hz: f64,
    /// Mixed into the scene seed when rendering; 0 renders the scene as is.
    pub seed: u64,
    pub max_ticks: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            angular_gate: 5f64.to_radians(),
            v_max: 0.05,
            omega_max: 0.2,
            control_hz: 10.0,
            seed: 0,
            max_ticks: 100_000,
        }
    }
}

impl SimConfig {
    /// The robot reaches every attractor within one tick.
    pub fn ideal() -> Self {
        Self { v_max: 1e9, omega_max: 1e9, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ExecutorError> {
        let all_positive = [self.epsilon, self.angular_gate, self.v_max, self.omega_max, self.control_hz]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !all_positive {
            return Err(ExecutorError::InvalidConfig(format!("simulator parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn is_near(&self, pose: &Pose, target: &Pose) -> bool {
        pose.distance(target) < self.epsilon && pose.angle_to(target) < self.angular_gate
    }
}

/// Who may raise anomaly events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyGate {
    System,
    User,
    #[default]
    Either,
}

impl AnomalyGate {
    pub fn allows(self, source: AnomalySource) -> bool {
        matches!(
            (self, source),
            (AnomalyGate::Either, _)
                | (AnomalyGate::System, AnomalySource::System)
                | (AnomalyGate::User, AnomalySource::User)
        )
    }
}

impl std::str::FromStr for AnomalyGate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "system" => Ok(Self::System),
            "user" => Ok(Self::User),
            "either" => Ok(Self::Either),
            other => Err(format!("unknown gate {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ExecConfig {
    pub sim: SimConfig,
    /// Votes (and consecutive anomalous frames) needed to commit.
    pub latch_frames: u32,
    pub gate: AnomalyGate,
    pub workspace: Workspace,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self { sim: SimConfig::default(), latch_frames: 3, gate: AnomalyGate::Either, workspace: Workspace::default() }
    }
}
