//! Task-graph data model: skill parts, decision states and the teaching
//! operations that grow the graph (split, branch, append trial).
//!
//! Every trajectory index is task time. Step `k` of any trial of a part with
//! offset `K` was recorded at task time `K + k`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DsId(pub u32);

impl fmt::Display for PartId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for DsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ds{}", self.0)
    }
}

/// Key into the embedding store: which part/trial recorded the frame and at
/// which task time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub part: PartId,
    pub trial: u32,
    pub step: u32,
}

impl FrameKey {
    pub fn new(part: PartId, trial: u32, step: u32) -> Self {
        Self { part, trial, step }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Gripper {
    #[default]
    Open,
    Closed,
}

impl Gripper {
    pub fn as_scalar(self) -> f64 {
        match self {
            Gripper::Open => 0.0,
            Gripper::Closed => 1.0,
        }
    }
}

impl Serialize for Gripper {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Gripper::Open => 0,
            Gripper::Closed => 1,
        })
    }
}

impl<'de> Deserialize<'de> for Gripper {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Gripper::Open),
            1 => Ok(Gripper::Closed),
            other => Err(serde::de::Error::custom(format!("gripper must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStep {
    pub pose: Pose,
    pub gripper: Gripper,
    pub observation: FrameKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    Demonstration,
    Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: u32,
    pub kind: TrialKind,
    /// Local index of the first step. Non-zero for execution trials that
    /// joined the part mid-way.
    #[serde(default)]
    pub start: u32,
    pub steps: Vec<TimeStep>,
}

impl Trial {
    pub fn demonstration(steps: Vec<TimeStep>) -> Self {
        Self { index: 0, kind: TrialKind::Demonstration, start: 0, steps }
    }

    pub fn execution(steps: Vec<TimeStep>) -> Self {
        Self { index: 0, kind: TrialKind::Execution, start: 0, steps }
    }

    pub fn execution_from(start: u32, steps: Vec<TimeStep>) -> Self {
        Self { index: 0, kind: TrialKind::Execution, start, steps }
    }

    /// `(task time, step)` pairs for a part with offset `offset`.
    pub fn timed(&self, offset: u32) -> impl Iterator<Item = (u32, &TimeStep)> {
        let base = offset + self.start;
        self.steps.iter().enumerate().map(move |(k, s)| (base + k as u32, s))
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPart {
    pub id: PartId,
    pub offset: u32,
    pub trials: Vec<Trial>,
}

impl SkillPart {
    pub fn new(id: PartId, offset: u32, demonstration: Trial) -> Self {
        let mut demonstration = demonstration;
        demonstration.index = 0;
        demonstration.kind = TrialKind::Demonstration;
        Self { id, offset, trials: vec![demonstration] }
    }

    /// Trajectory length N: length of the demonstration.
    pub fn len(&self) -> u32 {
        self.trials.first().map(|t| t.steps.len() as u32).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First task time after the part: `K + N`.
    pub fn end(&self) -> u32 {
        self.offset + self.len()
    }

    pub fn reference(&self) -> &Trial {
        &self.trials[0]
    }

    /// The replay controller's attractor at task time `tau`.
    pub fn attractor(&self, tau: u32) -> Option<&TimeStep> {
        tau.checked_sub(self.offset).and_then(|local| self.trials[0].steps.get(local as usize))
    }

    pub fn is_eligible_at(&self, tau: u32) -> bool {
        tau >= self.offset
    }
}

/// Closed interval of task time `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Window {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn from_length(start: u32, length: u32) -> Self {
        Self { start, end: start + length }
    }

    pub fn contains(&self, tau: u32) -> bool {
        tau >= self.start && tau <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelState {
    #[default]
    Missing,
    Stale,
    Ready,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub id: DsId,
    pub root_part: PartId,
    pub t_ds: u32,
    pub window: Window,
    /// Permitted successors, in insertion order. The root is always first.
    pub permitted: Vec<PartId>,
    #[serde(default)]
    pub model: ModelState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: PartId,
    pub to: PartId,
    pub via: DsId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub task_id: String,
    pub parts: BTreeMap<PartId, SkillPart>,
    pub edges: Vec<Edge>,
    pub decision_states: Vec<DecisionState>,
    /// Context window length `e` used for decision states created by splits.
    pub window_length: u32,
    pub next_part_id: u32,
    pub next_ds_id: u32,
}

pub const DEFAULT_WINDOW_LENGTH: u32 = 10;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("part {0} not found")]
    PartNotFound(PartId),
    #[error("decision state {0} not found")]
    DsNotFound(DsId),
    #[error("split time {t} outside ({start}, {end}) of part {part}")]
    SplitOutOfRange { part: PartId, t: u32, start: u32, end: u32 },
    #[error("trial {trial} of part {part} does not reach task time {t}")]
    InconsistentTrial { part: PartId, trial: u32, t: u32 },
    #[error("part offset {offset} does not match decision state time {t_ds}")]
    OffsetMismatch { offset: u32, t_ds: u32 },
    #[error("part {0} already exists")]
    Conflict(PartId),
    #[error("invalid trial: {0}")]
    InvalidTrial(&'static str),
}

/// Result of splitting a part in two around a new decision state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub prefix: PartId,
    pub suffix: PartId,
    pub ds: DsId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvariantKind {
    MissingInitialPart,
    InitialPartOffset,
    EmptyPart,
    FirstTrialNotDemonstration,
    TrialIndex,
    DanglingEdge,
    UnknownDecisionState,
    EdgeNotPermitted,
    Eligibility,
    DsTimeOutsideWindow,
    RootNotPermitted,
    PermittedUnknownPart,
    InvalidPose,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub invariant: InvariantKind,
    pub entity: String,
}

impl TaskGraph {
    /// Fresh task made of a single demonstrated part `s0` with offset 0.
    pub fn new(task_id: impl Into<String>, demonstration: Trial) -> Self {
        let part = SkillPart::new(PartId(0), 0, demonstration);
        let mut parts = BTreeMap::new();
        parts.insert(PartId(0), part);
        Self {
            task_id: task_id.into(),
            parts,
            edges: Vec::new(),
            decision_states: Vec::new(),
            window_length: DEFAULT_WINDOW_LENGTH,
            next_part_id: 1,
            next_ds_id: 0,
        }
    }

    pub fn part(&self, id: PartId) -> Result<&SkillPart, GraphError> {
        self.parts.get(&id).ok_or(GraphError::PartNotFound(id))
    }

    fn part_mut(&mut self, id: PartId) -> Result<&mut SkillPart, GraphError> {
        self.parts.get_mut(&id).ok_or(GraphError::PartNotFound(id))
    }

    pub fn ds(&self, id: DsId) -> Result<&DecisionState, GraphError> {
        self.decision_states.iter().find(|d| d.id == id).ok_or(GraphError::DsNotFound(id))
    }

    fn ds_mut(&mut self, id: DsId) -> Result<&mut DecisionState, GraphError> {
        self.decision_states.iter_mut().find(|d| d.id == id).ok_or(GraphError::DsNotFound(id))
    }

    /// Decision states whose switching happens from `part`.
    pub fn ds_rooted_at(&self, part: PartId) -> impl Iterator<Item = &DecisionState> {
        self.decision_states.iter().filter(move |d| d.root_part == part)
    }

    pub fn allocate_part_id(&mut self) -> PartId {
        let id = PartId(self.next_part_id);
        self.next_part_id += 1;
        id
    }

    /// Id the next inserted part will receive.
    pub fn peek_part_id(&self) -> PartId {
        PartId(self.next_part_id)
    }

    fn allocate_ds_id(&mut self) -> DsId {
        let id = DsId(self.next_ds_id);
        self.next_ds_id += 1;
        id
    }

    pub fn total_steps(&self) -> usize {
        self.parts.values().flat_map(|p| &p.trials).map(|t| t.steps.len()).sum()
    }

    /// Successor reached when `part` runs out of trajectory: the suffix created
    /// when the part was split, if any.
    pub fn continuation(&self, part: PartId) -> Option<PartId> {
        let end = self.parts.get(&part)?.end();
        self.edges.iter().find(|e| e.from == part && self.parts.get(&e.to).map(|p| p.offset) == Some(end)).map(|e| e.to)
    }

    /// Parts traversed from `s0` to reach `leaf`, following incoming edges.
    pub fn variant_path(&self, leaf: PartId) -> Vec<PartId> {
        let mut path = vec![leaf];
        let mut current = leaf;
        while current != PartId(0) {
            let Some(edge) = self.edges.iter().find(|e| e.to == current && e.from != current) else {
                break;
            };
            if path.contains(&edge.from) {
                break;
            }
            current = edge.from;
            path.push(current);
        }
        path.reverse();
        path
    }

    /// Adds a decision state rooted at `root` (permitted set initialized to
    /// the root) or returns the one already there at the same time.
    pub fn open_decision_state(&mut self, root: PartId, t_ds: u32) -> Result<DsId, GraphError> {
        self.part(root)?;
        if let Some(d) = self.decision_states.iter().find(|d| d.root_part == root && d.t_ds == t_ds) {
            return Ok(d.id);
        }
        let id = self.allocate_ds_id();
        self.decision_states.push(DecisionState {
            id,
            root_part: root,
            t_ds,
            window: Window::from_length(t_ds, self.window_length),
            permitted: vec![root],
            model: ModelState::Missing,
        });
        Ok(id)
    }

    /// Splits `part_id` at task time `t_split` into a prefix (keeping the id)
    /// and a suffix starting at `t_split`, with a decision state between them.
    /// Every trial must have steps on both sides of the split.
    pub fn split_part(&mut self, part_id: PartId, t_split: u32) -> Result<Split, GraphError> {
        self.split_impl(part_id, t_split, true)
    }

    /// Like [`split_part`](Self::split_part), but trials lying entirely on one
    /// side of the split move to that side whole (re-indexed in order). Used
    /// while teaching, when execution trials that switched away early or
    /// joined late are common.
    pub fn split_part_partitioning(&mut self, part_id: PartId, t_split: u32) -> Result<Split, GraphError> {
        self.split_impl(part_id, t_split, false)
    }

    fn split_impl(&mut self, part_id: PartId, t_split: u32, strict: bool) -> Result<Split, GraphError> {
        let part = self.part(part_id)?;
        let (start, end) = (part.offset, part.end());
        if t_split <= start || t_split >= end {
            return Err(GraphError::SplitOutOfRange { part: part_id, t: t_split, start, end });
        }
        let local = t_split - start;
        if strict {
            if let Some(short) =
                part.trials.iter().find(|tr| tr.start >= local || (tr.start + tr.steps.len() as u32) <= local)
            {
                return Err(GraphError::InconsistentTrial { part: part_id, trial: short.index, t: t_split });
            }
        }

        let suffix_id = self.allocate_part_id();
        let part = self.part_mut(part_id)?;
        let mut prefix_trials = Vec::new();
        let mut suffix_trials = Vec::new();
        for mut tr in std::mem::take(&mut part.trials) {
            let tr_end = tr.start + tr.steps.len() as u32;
            if tr_end <= local {
                prefix_trials.push(tr);
            } else if tr.start >= local {
                tr.start -= local;
                suffix_trials.push(tr);
            } else {
                let tail = tr.steps.split_off((local - tr.start) as usize);
                suffix_trials.push(Trial { index: tr.index, kind: tr.kind, start: 0, steps: tail });
                prefix_trials.push(tr);
            }
        }
        for (i, tr) in prefix_trials.iter_mut().enumerate() {
            tr.index = i as u32;
        }
        for (i, tr) in suffix_trials.iter_mut().enumerate() {
            tr.index = i as u32;
        }
        part.trials = prefix_trials;
        self.parts.insert(suffix_id, SkillPart { id: suffix_id, offset: t_split, trials: suffix_trials });

        // References at or after the split move to the suffix.
        let moved: Vec<DsId> =
            self.decision_states.iter().filter(|d| d.root_part == part_id && d.t_ds >= t_split).map(|d| d.id).collect();
        for d in self.decision_states.iter_mut().filter(|d| moved.contains(&d.id)) {
            d.root_part = suffix_id;
            for p in d.permitted.iter_mut().filter(|p| **p == part_id) {
                *p = suffix_id;
            }
        }
        let ds_time: BTreeMap<DsId, u32> = self.decision_states.iter().map(|d| (d.id, d.t_ds)).collect();
        for e in self.edges.iter_mut().filter(|e| e.from == part_id) {
            if ds_time.get(&e.via).is_some_and(|t| *t >= t_split) {
                e.from = suffix_id;
            }
        }
        let ds = self.open_decision_state(suffix_id, t_split)?;
        self.push_edge(Edge { from: part_id, to: suffix_id, via: ds });
        Ok(Split { prefix: part_id, suffix: suffix_id, ds })
    }

    fn push_edge(&mut self, edge: Edge) {
        if !self.edges.contains(&edge) {
            self.edges.push(edge);
        }
    }

    /// Stores an execution trial on a part and returns its index.
    pub fn append_trial(&mut self, part_id: PartId, trial: Trial) -> Result<u32, GraphError> {
        if trial.is_empty() {
            return Err(GraphError::InvalidTrial("trial has no steps"));
        }
        if trial.kind != TrialKind::Execution {
            return Err(GraphError::InvalidTrial("only execution trials can be appended"));
        }
        let part = self.part_mut(part_id)?;
        let index = part.trials.len() as u32;
        let mut trial = trial;
        trial.index = index;
        part.trials.push(trial);
        Ok(index)
    }

    /// Appends steps to an existing execution trial (used when a refined
    /// trial keeps recording after being saved).
    pub fn extend_trial(&mut self, part_id: PartId, index: u32, steps: Vec<TimeStep>) -> Result<(), GraphError> {
        let part = self.part_mut(part_id)?;
        let trial = part
            .trials
            .iter_mut()
            .find(|t| t.index == index && t.kind == TrialKind::Execution)
            .ok_or(GraphError::InvalidTrial("no such execution trial"))?;
        trial.steps.extend(steps);
        Ok(())
    }

    /// Inserts a demonstrated successor at decision state `ds_id`.
    pub fn add_branch(&mut self, ds_id: DsId, new_part: SkillPart) -> Result<PartId, GraphError> {
        let ds = self.ds(ds_id)?;
        let (root, t_ds) = (ds.root_part, ds.t_ds);
        if self.parts.contains_key(&new_part.id) {
            return Err(GraphError::Conflict(new_part.id));
        }
        if new_part.offset != t_ds {
            return Err(GraphError::OffsetMismatch { offset: new_part.offset, t_ds });
        }
        if new_part.trials.len() != 1
            || new_part.trials[0].kind != TrialKind::Demonstration
            || new_part.trials[0].is_empty()
        {
            return Err(GraphError::InvalidTrial("a branch part carries exactly one non-empty demonstration"));
        }
        let id = new_part.id;
        self.next_part_id = self.next_part_id.max(id.0 + 1);
        self.parts.insert(id, new_part);
        let ds = self.ds_mut(ds_id)?;
        if !ds.permitted.contains(&id) {
            ds.permitted.push(id);
        }
        ds.model = ModelState::Stale;
        self.push_edge(Edge { from: root, to: id, via: ds_id });
        Ok(id)
    }

    pub fn mark_models_stale(&mut self, root: PartId) {
        for d in self.decision_states.iter_mut().filter(|d| d.root_part == root || d.permitted.contains(&root)) {
            if d.model == ModelState::Ready {
                d.model = ModelState::Stale;
            }
        }
    }

    /// Lists every violated graph invariant. Never fails.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |invariant, entity: String| out.push(Violation { invariant, entity });

        match self.parts.get(&PartId(0)) {
            None => push(InvariantKind::MissingInitialPart, "s0".into()),
            Some(p) if p.offset != 0 => push(InvariantKind::InitialPartOffset, "s0".into()),
            _ => {}
        }
        for (id, part) in &self.parts {
            if part.is_empty() {
                push(InvariantKind::EmptyPart, id.to_string());
                continue;
            }
            if part.trials[0].kind != TrialKind::Demonstration || part.trials[0].start != 0 {
                push(InvariantKind::FirstTrialNotDemonstration, id.to_string());
            }
            for (k, trial) in part.trials.iter().enumerate() {
                if trial.index as usize != k || (k > 0 && trial.kind != TrialKind::Execution) {
                    push(InvariantKind::TrialIndex, format!("{id}/trial{k}"));
                }
                if trial.steps.iter().any(|s| !s.pose.is_valid()) {
                    push(InvariantKind::InvalidPose, format!("{id}/trial{k}"));
                }
            }
        }
        for d in &self.decision_states {
            if !d.window.contains(d.t_ds) {
                push(InvariantKind::DsTimeOutsideWindow, d.id.to_string());
            }
            if !d.permitted.contains(&d.root_part) {
                push(InvariantKind::RootNotPermitted, d.id.to_string());
            }
            for p in &d.permitted {
                match self.parts.get(p) {
                    None => push(InvariantKind::PermittedUnknownPart, format!("{}->{p}", d.id)),
                    Some(part) if part.offset > d.window.end => {
                        push(InvariantKind::Eligibility, format!("{}->{p}", d.id))
                    }
                    _ => {}
                }
            }
            if !self.parts.contains_key(&d.root_part) {
                push(InvariantKind::PermittedUnknownPart, format!("{} root {}", d.id, d.root_part));
            }
        }
        for e in &self.edges {
            let label = format!("{}->{} via {}", e.from, e.to, e.via);
            if !self.parts.contains_key(&e.from) || !self.parts.contains_key(&e.to) {
                push(InvariantKind::DanglingEdge, label);
                continue;
            }
            let Some(d) = self.decision_states.iter().find(|d| d.id == e.via) else {
                push(InvariantKind::UnknownDecisionState, label);
                continue;
            };
            if !d.permitted.contains(&e.to) {
                push(InvariantKind::EdgeNotPermitted, label.clone());
                // permitted members are checked for eligibility above
                if self.parts[&e.to].offset > d.window.end {
                    push(InvariantKind::Eligibility, label);
                }
            }
        }
        out
    }

    /// Hash over the graph structure: part ids, offsets and lengths, edges and
    /// decision-state topology. Trials and model status are excluded.
    pub fn structure_hash(&self) -> String {
        #[derive(Serialize)]
        struct Shape<'a> {
            task: &'a str,
            parts: Vec<(u32, u32, u32)>,
            edges: &'a [Edge],
            ds: Vec<(u32, u32, u32, Window, &'a [PartId])>,
        }
        let shape = Shape {
            task: &self.task_id,
            parts: self.parts.values().map(|p| (p.id.0, p.offset, p.len())).collect(),
            edges: &self.edges,
            ds: self
                .decision_states
                .iter()
                .map(|d| (d.id.0, d.root_part.0, d.t_ds, d.window, d.permitted.as_slice()))
                .collect(),
        };
        let bytes = serde_json::to_vec(&shape).expect("shape serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn line_trial(part: PartId, trial: u32, offset: u32, n: usize) -> Vec<TimeStep> {
        (0..n)
            .map(|k| TimeStep {
                pose: Pose::looking_down([0.001 * k as f64, 0.0, 0.4]),
                gripper: if k * 2 >= n { Gripper::Closed } else { Gripper::Open },
                observation: FrameKey::new(part, trial, offset + k as u32),
            })
            .collect()
    }

    pub fn single_part(n: usize) -> TaskGraph {
        TaskGraph::new("t", Trial::demonstration(line_trial(PartId(0), 0, 0, n)))
    }
}
