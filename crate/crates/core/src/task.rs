use serde::{Deserialize, Serialize};

use crate::embeddings::{EncoderConfig, FrameStore, ObservationProvider, SceneState};
use crate::executor::{demonstrate, record_trial, ExecConfig, ExecutorError, Waypoint};
use crate::graph::{DsId, PartId, SkillPart, TaskGraph, TrialKind, DEFAULT_WINDOW_LENGTH};
use crate::switcher::{ensure_trained, ModelSet, SwitcherConfig, SwitcherError};

/// Hyperparameters stored with a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TaskConfig {
    pub window_length: u32,
    pub encoder: EncoderConfig,
    pub switcher: SwitcherConfig,
    pub exec: ExecConfig,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            window_length: DEFAULT_WINDOW_LENGTH,
            encoder: EncoderConfig::default(),
            switcher: SwitcherConfig::default(),
            exec: ExecConfig::default(),
        }
    }
}

/// A taught task: its graph, the observations its trials refer to, and the
/// trained switcher models.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub graph: TaskGraph,
    pub frames: FrameStore,
    pub models: ModelSet,
    pub config: TaskConfig,
}

impl Task {
    /// New task whose initial part is the given demonstration.
    pub fn from_waypoints(
        task_id: &str,
        waypoints: &[Waypoint],
        scene: &SceneState,
        provider: &dyn ObservationProvider,
        config: TaskConfig,
    ) -> Result<Self, ExecutorError> {
        let samples = demonstrate(waypoints, config.exec.sim.control_hz, &config.exec.workspace)?;
        let mut frames = FrameStore::new();
        let trial = record_trial(&samples, PartId(0), 0, TrialKind::Demonstration, scene, provider, &mut frames)?;
        let mut graph = TaskGraph::new(task_id, trial);
        graph.window_length = config.window_length;
        Ok(Self { graph, frames, models: ModelSet::new(), config })
    }

    /// Teaches a new successor at an existing decision state from a
    /// demonstration that starts at the decision time.
    pub fn add_branch_from_waypoints(
        &mut self,
        ds: DsId,
        waypoints: &[Waypoint],
        scene: &SceneState,
        provider: &dyn ObservationProvider,
    ) -> Result<PartId, ExecutorError> {
        let d = self.graph.ds(ds)?;
        let (root, t_ds) = (d.root_part, d.t_ds);
        let samples = demonstrate(waypoints, self.config.exec.sim.control_hz, &self.config.exec.workspace)?;
        let id = self.graph.peek_part_id();
        let trial = record_trial(&samples, id, 0, TrialKind::Demonstration, scene, provider, &mut self.frames)?;
        self.graph.add_branch(ds, SkillPart::new(id, t_ds, trial))?;
        self.graph.mark_models_stale(root);
        Ok(id)
    }

    /// Retrains whatever is stale; returns the retrained cluster keys.
    pub fn train(&mut self) -> Result<Vec<DsId>, SwitcherError> {
        ensure_trained(&mut self.models, &mut self.graph, &self.frames, &self.config.switcher)
    }
}
