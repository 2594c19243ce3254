use serde::{Deserialize, Serialize};

use super::latch::{latch_update, LatchDecision, Tally};
use super::rollout::{AnomalySource, Event, Outcome, OutcomeStatus, Rollout, TickRecord};
use super::{demonstrate, record_trial, Command, CommandQueue, ExecutorError, SimConfig, Waypoint};
use crate::embeddings::{FrameStore, ObservationProvider, SceneState};
use crate::geometry::{lerp3, slerp, Pose};
use crate::graph::{FrameKey, Gripper, ModelState, PartId, SkillPart, TimeStep, Trial, TrialKind};
use crate::switcher::predict;
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Replaying,
    AwaitingUser,
    Demonstrating,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PendingAnomaly {
    pub tau: u32,
    pub pose: Pose,
    pub source: AnomalySource,
    pub score: f64,
}

/// Steps recorded on the active part during this episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrialBuffer {
    pub part: PartId,
    /// Trial index the buffer will be stored under.
    pub index: u32,
    /// Local index of the first step.
    pub start: u32,
    pub steps: Vec<TimeStep>,
    /// After a refine the buffer is written through to the graph on every step.
    pub live: bool,
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutionState {
    pub tick: u64,
    pub tau: u32,
    pub active: PartId,
    pub pose: Pose,
    pub gripper: Gripper,
    pub buffer: TrialBuffer,
    pub tally: Tally,
    pub phase: Phase,
    pub pending: Option<PendingAnomaly>,
}

impl ExecutionState {
    pub fn local_index(&self, offset: u32) -> u32 {
        self.tau - offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnomalyDecision {
    Branch(Vec<(Pose, Gripper)>),
    Refine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickStatus {
    Running,
    /// Waiting for the user and no answer is queued.
    NeedsInput,
    Finished,
}

/// Moves at most `v_max` toward the target position and at most `omega_max`
/// toward its orientation.
pub fn drive(pose: &Pose, target: &Pose, sim: &SimConfig) -> Pose {
    let d = pose.distance(target);
    let position =
        if d <= sim.v_max { target.position } else { lerp3(&pose.position, &target.position, sim.v_max / d) };
    let angle = pose.angle_to(target);
    let orientation = if angle <= sim.omega_max {
        target.orientation
    } else {
        slerp(&pose.orientation, &target.orientation, sim.omega_max / angle)
    };
    Pose::new(position, orientation)
}

fn new_buffer(task: &Task, part: PartId, start: u32) -> TrialBuffer {
    let index = task.graph.parts.get(&part).map_or(0, |p| p.trials.len() as u32);
    TrialBuffer { part, index, start, steps: Vec::new(), live: false, stored: 0 }
}

/// Writes the unstored part of the buffer into the graph. Returns the trial
/// index when something was stored.
fn store_buffer(
    task: &mut Task,
    buffer: &mut TrialBuffer,
    frames: &FrameStore,
) -> Result<Option<(u32, u32)>, ExecutorError> {
    if buffer.stored == buffer.steps.len() {
        return Ok(None);
    }
    let fresh = buffer.steps[buffer.stored..].to_vec();
    for s in &fresh {
        task.frames.insert(s.observation, frames.get(&s.observation)?.clone());
    }
    if buffer.stored == 0 {
        let r = task.graph.append_trial(buffer.part, Trial::execution_from(buffer.start, fresh))?;
        debug_assert_eq!(r, buffer.index);
        buffer.index = r;
    } else {
        task.graph.extend_trial(buffer.part, buffer.index, fresh)?;
    }
    buffer.stored = buffer.steps.len();
    Ok(Some((buffer.index, buffer.steps.len() as u32)))
}

/// One execution of a task on a scene, advanced tick by tick.
pub struct Episode<'a> {
    task: &'a mut Task,
    provider: &'a dyn ObservationProvider,
    scene: SceneState,
    render_scene: SceneState,
    state: ExecutionState,
    queue: CommandQueue,
    ticks: Vec<TickRecord>,
    events: Vec<Event>,
    frames: FrameStore,
    outcome: Option<Outcome>,
    expected_variant: Option<Vec<PartId>>,
}

impl<'a> Episode<'a> {
    pub fn new(
        task: &'a mut Task,
        provider: &'a dyn ObservationProvider,
        scene: &SceneState,
        queue: CommandQueue,
    ) -> Result<Self, ExecutorError> {
        task.config.exec.sim.validate()?;
        task.train()?;
        let start = PartId(0);
        task.graph.part(start)?;
        let sim_seed = task.config.exec.sim.seed;
        let render_scene = if sim_seed == 0 {
            scene.clone()
        } else {
            scene.with_seed(scene.seed ^ sim_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        };
        let buffer = new_buffer(task, start, 0);
        let state = ExecutionState {
            tick: 0,
            tau: 0,
            active: start,
            pose: scene.robot_pose,
            gripper: Gripper::Open,
            buffer,
            tally: Tally::default(),
            phase: Phase::Replaying,
            pending: None,
        };
        Ok(Self {
            task,
            provider,
            scene: scene.clone(),
            render_scene,
            state,
            queue,
            ticks: Vec::new(),
            events: Vec::new(),
            frames: FrameStore::new(),
            outcome: None,
            expected_variant: None,
        })
    }

    pub fn with_expected_variant(mut self, variant: Vec<PartId>) -> Self {
        self.expected_variant = Some(variant);
        self
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn task(&self) -> &Task {
        self.task
    }

    /// The scene as the camera renders it, after seed mixing.
    pub fn render_scene(&self) -> &SceneState {
        &self.render_scene
    }

    pub fn queue_mut(&mut self) -> &mut CommandQueue {
        &mut self.queue
    }

    pub fn ticks(&self) -> &[TickRecord] {
        &self.ticks
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    /// Lets time pass while waiting for the user, so timed commands can come due.
    pub fn idle_tick(&mut self) {
        self.state.tick += 1;
    }

    pub fn tick(&mut self) -> Result<TickStatus, ExecutorError> {
        if self.outcome.is_some() {
            return Ok(TickStatus::Finished);
        }
        if self.state.tick >= self.task.config.exec.sim.max_ticks {
            return Err(ExecutorError::TickLimit(self.state.tick));
        }
        while let Some(cmd) = self.queue.pop_due(self.state.tick) {
            self.apply(cmd)?;
            if self.outcome.is_some() {
                return Ok(TickStatus::Finished);
            }
        }
        if self.state.phase == Phase::AwaitingUser {
            match self.queue.pop_answer() {
                Some(cmd) => self.answer(cmd)?,
                None => return Ok(TickStatus::NeedsInput),
            }
            if self.outcome.is_some() {
                return Ok(TickStatus::Finished);
            }
            if self.state.phase != Phase::Replaying {
                return Ok(TickStatus::Running);
            }
        }
        self.replay_tick()?;
        Ok(if self.outcome.is_some() { TickStatus::Finished } else { TickStatus::Running })
    }

    fn emit(&mut self, event: Event, tick_events: &mut Vec<Event>) {
        tick_events.push(event.clone());
        self.events.push(event);
    }

    fn emit_now(&mut self, event: Event) {
        if let Some(last) = self.ticks.last_mut() {
            last.events.push(event.clone());
        }
        self.events.push(event);
    }

    /// Commands delivered while the robot replays.
    fn apply(&mut self, cmd: Command) -> Result<(), ExecutorError> {
        match cmd {
            Command::AnomalyFlag if self.state.phase == Phase::Replaying => {
                if self.task.config.exec.gate.allows(AnomalySource::User) {
                    let score = self.ticks.last().map_or(1.0, |t| t.anomaly_score);
                    let event = self.raise_anomaly(AnomalySource::User, score);
                    self.emit_now(event);
                }
            }
            Command::Pause if self.state.phase == Phase::Replaying => {
                self.state.phase = Phase::AwaitingUser;
                let tau = self.state.tau;
                self.emit_now(Event::Paused { tau });
            }
            Command::Abort => self.abort(),
            other if self.state.phase == Phase::AwaitingUser => self.answer(other)?,
            _ => {}
        }
        Ok(())
    }

    fn answer(&mut self, cmd: Command) -> Result<(), ExecutorError> {
        let tau = self.state.tau;
        match cmd {
            Command::Abort => self.abort(),
            Command::Gripper { state } => self.state.gripper = state,
            Command::Approve if self.state.pending.is_some() => {
                let events = handle_anomaly(
                    self.task,
                    &mut self.state,
                    &mut self.frames,
                    AnomalyDecision::Refine,
                    &self.render_scene,
                    self.provider,
                )?;
                events.into_iter().for_each(|e| self.emit_now(e));
            }
            Command::Approve => {
                self.state.phase = Phase::Replaying;
                self.emit_now(Event::Resumed { tau });
            }
            Command::Demonstrate { mut waypoints, from_current } if self.state.pending.is_some() => {
                self.state.phase = Phase::Demonstrating;
                if from_current {
                    waypoints.insert(0, Waypoint { t: 0.0, pose: self.state.pose, gripper: self.state.gripper });
                }
                let exec = self.task.config.exec;
                let result = demonstrate(&waypoints, exec.sim.control_hz, &exec.workspace).and_then(|samples| {
                    handle_anomaly(
                        self.task,
                        &mut self.state,
                        &mut self.frames,
                        AnomalyDecision::Branch(samples),
                        &self.render_scene,
                        self.provider,
                    )
                });
                match result {
                    Ok(events) => {
                        events.into_iter().for_each(|e| self.emit_now(e));
                        self.finish(OutcomeStatus::Taught);
                    }
                    Err(
                        e @ (ExecutorError::RejectedDemonstration { .. }
                        | ExecutorError::InvalidWaypoint { .. }
                        | ExecutorError::EmptyDemonstration),
                    ) => {
                        self.state.phase = Phase::AwaitingUser;
                        self.emit_now(Event::DemonstrationRejected { tau, reason: e.to_string() });
                    }
                    Err(e) => return Err(e),
                }
            }
            Command::Demonstrate { .. } => {
                self.emit_now(Event::DemonstrationRejected { tau, reason: "no anomaly is pending".into() });
            }
            Command::Pause | Command::AnomalyFlag => {}
        }
        Ok(())
    }

    fn raise_anomaly(&mut self, source: AnomalySource, score: f64) -> Event {
        self.state.phase = Phase::AwaitingUser;
        self.state.pending = Some(PendingAnomaly { tau: self.state.tau, pose: self.state.pose, source, score });
        Event::Anomaly { tau: self.state.tau, part: self.state.active, source, score }
    }

    fn abort(&mut self) {
        // partial buffers are discarded; steps already written through stay
        let tau = self.state.tau;
        self.emit_now(Event::Aborted { tau });
        self.finish(OutcomeStatus::Aborted);
    }

    fn finish(&mut self, status: OutcomeStatus) {
        self.state.phase = Phase::Done;
        let final_part = match (
            &status,
            self.events.iter().rev().find_map(|e| match e {
                Event::Branch { new_part, .. } => Some(*new_part),
                _ => None,
            }),
        ) {
            (OutcomeStatus::Taught, Some(p)) => p,
            _ => self.state.active,
        };
        self.outcome = Some(Outcome {
            status,
            final_part,
            final_tau: self.state.tau,
            executed_variant: self.task.graph.variant_path(final_part),
            ticks: self.state.tick,
        });
    }

    fn save_buffer(&mut self, tick_events: &mut Vec<Event>) -> Result<(), ExecutorError> {
        if let Some((trial, steps)) = store_buffer(self.task, &mut self.state.buffer, &self.frames)? {
            let part = self.state.buffer.part;
            self.emit(Event::TrialSaved { part, trial, steps }, tick_events);
        }
        Ok(())
    }

    fn needs_training(&self) -> bool {
        self.task.graph.decision_states.iter().any(|d| d.model != ModelState::Ready) || self.state.buffer.live
    }

    fn replay_tick(&mut self) -> Result<(), ExecutorError> {
        if self.needs_training() {
            self.task.train()?;
        }
        let sim = self.task.config.exec.sim;
        let m = self.task.config.exec.latch_frames;
        let (end, target) = {
            let part = self.task.graph.part(self.state.active)?;
            let target = part
                .attractor(self.state.tau)
                .ok_or(ExecutorError::Eligibility { part: self.state.active, tau: self.state.tau })?
                .clone();
            (part.end(), target)
        };
        self.state.pose = drive(&self.state.pose, &target.pose, &sim);
        self.state.gripper = target.gripper;

        let key = FrameKey::new(self.state.active, self.state.buffer.index, self.state.buffer.steps.len() as u32);
        let obs = self.provider.observe(key, &self.render_scene, &self.state.pose)?.with_key(key);
        let pred = predict(&self.task.models, &self.task.graph, self.state.active, self.state.tau, &obs)?;
        let mut tick_events = Vec::new();
        let tau = self.state.tau;

        if pred.cluster != self.state.tally.cluster {
            if let (Some(old), None) = (self.state.tally.cluster, self.state.tally.committed) {
                self.emit(Event::LowConfidence { tau, ds: old }, &mut tick_events);
            }
            self.state.tally.reset_window(pred.cluster);
        }

        let mut advance = true;
        match latch_update(&mut self.state.tally, &pred, m) {
            LatchDecision::Commit(j) if j != self.state.active => {
                let ds = pred.cluster.expect("commits only happen inside windows");
                let next = self.task.graph.part(j)?;
                if !next.is_eligible_at(tau) {
                    return Err(ExecutorError::Eligibility { part: j, tau });
                }
                let next_offset = next.offset;
                self.save_buffer(&mut tick_events)?;
                let from = self.state.active;
                self.emit(Event::Switch { tau, from, to: j, ds }, &mut tick_events);
                self.state.active = j;
                self.state.buffer = new_buffer(self.task, j, tau - next_offset);
                advance = false;
            }
            LatchDecision::Anomaly if self.task.config.exec.gate.allows(AnomalySource::System) => {
                let event = self.raise_anomaly(AnomalySource::System, pred.anomaly_score);
                self.emit(event, &mut tick_events);
                advance = false;
            }
            _ => {}
        }

        if advance && sim.is_near(&self.state.pose, &target.pose) {
            self.state.buffer.steps.push(TimeStep {
                pose: self.state.pose,
                gripper: self.state.gripper,
                observation: key,
            });
            self.frames.insert(key, obs);
            if self.state.buffer.live {
                store_buffer(self.task, &mut self.state.buffer, &self.frames)?;
            }
            self.state.tau += 1;
            if self.state.tau == end {
                self.save_buffer(&mut tick_events)?;
                let from = self.state.active;
                match self.task.graph.continuation(from) {
                    Some(next) => {
                        self.emit(Event::Continue { tau: self.state.tau, from, to: next }, &mut tick_events);
                        self.state.active = next;
                        self.state.buffer = new_buffer(self.task, next, 0);
                    }
                    None => {
                        self.emit(Event::Done { tau: self.state.tau, part: from }, &mut tick_events);
                    }
                }
            }
        }

        self.ticks.push(TickRecord {
            tick: self.state.tick,
            tau,
            part: key.part,
            pose: self.state.pose,
            gripper: self.state.gripper,
            frame_key: key,
            scores: pred.scores,
            a_p: pred.anomalous,
            anomaly_score: pred.anomaly_score,
            events: tick_events,
        });
        self.state.tick += 1;
        if self.events.last().is_some_and(|e| matches!(e, Event::Done { .. })) && self.outcome.is_none() {
            self.finish(OutcomeStatus::Done);
        }
        Ok(())
    }

    pub fn into_rollout(self) -> Rollout {
        let outcome = self.outcome.unwrap_or_else(|| Outcome {
            status: OutcomeStatus::Aborted,
            final_part: self.state.active,
            final_tau: self.state.tau,
            executed_variant: self.task.graph.variant_path(self.state.active),
            ticks: self.state.tick,
        });
        Rollout {
            ticks: self.ticks,
            events: self.events,
            outcome,
            scene: self.scene,
            seed: self.task.config.exec.sim.seed,
            expected_variant: self.expected_variant,
            frames: self.frames,
        }
    }
}

/// Applies the user's answer to a pending anomaly. A branch saves the
/// buffered steps, splits the active part at the anomaly time (or opens a
/// decision state at its start) and adds the demonstrated part; a refine
/// stores the buffer as an execution trial and keeps writing to it.
pub fn handle_anomaly(
    task: &mut Task,
    state: &mut ExecutionState,
    frames: &mut FrameStore,
    decision: AnomalyDecision,
    scene: &SceneState,
    provider: &dyn ObservationProvider,
) -> Result<Vec<Event>, ExecutorError> {
    let pending = state.pending.clone().ok_or(ExecutorError::InvalidPhase {
        expected: "awaiting-user with a pending anomaly",
        actual: format!("{:?}", state.phase),
    })?;
    let mut events = Vec::new();
    match decision {
        AnomalyDecision::Refine => {
            state.buffer.live = true;
            if let Some((trial, _)) = store_buffer(task, &mut state.buffer, frames)? {
                events.push(Event::Refine { tau: pending.tau, part: state.active, trial });
            } else {
                events.push(Event::Refine { tau: pending.tau, part: state.active, trial: state.buffer.index });
            }
            task.graph.mark_models_stale(state.active);
            state.pending = None;
            state.phase = Phase::Replaying;
        }
        AnomalyDecision::Branch(samples) => {
            let start = samples.first().ok_or(ExecutorError::EmptyDemonstration)?.0;
            let limit = task.config.exec.sim.epsilon;
            let distance = start.distance(&pending.pose);
            if distance > limit {
                return Err(ExecutorError::RejectedDemonstration { distance, limit });
            }
            if let Some((trial, steps)) = store_buffer(task, &mut state.buffer, frames)? {
                events.push(Event::TrialSaved { part: state.buffer.part, trial, steps });
            }
            let tau = pending.tau;
            let active = task.graph.part(state.active)?;
            let (root, ds) = if tau > active.offset {
                let split = task.graph.split_part_partitioning(state.active, tau)?;
                (split.suffix, split.ds)
            } else {
                (state.active, task.graph.open_decision_state(state.active, tau)?)
            };
            let new_id = task.graph.peek_part_id();
            let trial = record_trial(&samples, new_id, 0, TrialKind::Demonstration, scene, provider, &mut task.frames)?;
            task.graph.add_branch(ds, SkillPart::new(new_id, tau, trial))?;
            task.graph.mark_models_stale(root);
            events.push(Event::Branch { tau, ds, root, new_part: new_id });
            let last = samples.last().expect("non-empty");
            state.pose = last.0;
            state.gripper = last.1;
            state.active = new_id;
            state.pending = None;
            state.phase = Phase::Done;
        }
    }
    Ok(events)
}

/// Runs an episode headlessly: the command stream must script every answer.
pub fn run_episode(
    task: &mut Task,
    provider: &dyn ObservationProvider,
    scene: &SceneState,
    queue: CommandQueue,
    expected_variant: Option<Vec<PartId>>,
) -> Result<Rollout, ExecutorError> {
    let mut episode = Episode::new(task, provider, scene, queue)?;
    if let Some(v) = expected_variant {
        episode = episode.with_expected_variant(v);
    }
    loop {
        match episode.tick()? {
            TickStatus::Running => {}
            TickStatus::Finished => break,
            TickStatus::NeedsInput => {
                if episode.queue.has_timed() {
                    episode.idle_tick();
                } else {
                    return Err(ExecutorError::Deadlock { tick: episode.state.tick });
                }
            }
        }
    }
    Ok(episode.into_rollout())
}
