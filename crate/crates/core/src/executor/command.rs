use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::graph::Gripper;

/// Demonstration keyframe; `t` is in seconds from the start of the demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Pose,
    pub gripper: Gripper,
}

/// Modality-independent user command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Command {
    /// With `fromCurrent` the demonstration starts at the paused robot pose
    /// at t = 0 and the listed waypoints follow it, which lets scripted
    /// streams answer anomalies whose pose is not known in advance.
    #[serde(rename_all = "camelCase")]
    Demonstrate {
        waypoints: Vec<Waypoint>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        from_current: bool,
    },
    AnomalyFlag,
    Approve,
    Gripper {
        state: Gripper,
    },
    Pause,
    Abort,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Demonstrate { .. } => "demonstrate",
            Command::AnomalyFlag => "anomalyFlag",
            Command::Approve => "approve",
            Command::Gripper { .. } => "gripper",
            Command::Pause => "pause",
            Command::Abort => "abort",
        }
    }
}

/// A queued command. Timed entries are delivered at their tick while the
/// robot replays; untimed entries answer the session when it waits for the
/// user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_tick: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub command: Command,
}

impl CommandEntry {
    pub fn answer(command: Command) -> Self {
        Self { at_tick: None, idempotency_key: None, command }
    }

    pub fn at(tick: u64, command: Command) -> Self {
        Self { at_tick: Some(tick), idempotency_key: None, command }
    }
}

/// Ordered command queue. Entries carrying an idempotency key already seen
/// are dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandQueue {
    timed: VecDeque<CommandEntry>,
    answers: VecDeque<CommandEntry>,
    seen: BTreeSet<String>,
}

impl CommandQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CommandEntry>) -> Self {
        let mut q = Self::new();
        for e in entries {
            q.push(e);
        }
        q
    }

    /// Returns false when the entry was a duplicate.
    pub fn push(&mut self, entry: CommandEntry) -> bool {
        if let Some(key) = &entry.idempotency_key {
            if !self.seen.insert(key.clone()) {
                return false;
            }
        }
        match entry.at_tick {
            Some(_) => {
                // keep timed entries sorted by tick, stable for equal ticks
                let pos = self.timed.iter().position(|e| e.at_tick > entry.at_tick).unwrap_or(self.timed.len());
                self.timed.insert(pos, entry);
            }
            None => self.answers.push_back(entry),
        }
        true
    }

    /// Next timed command due at or before `tick`.
    pub fn pop_due(&mut self, tick: u64) -> Option<Command> {
        if self.timed.front().and_then(|e| e.at_tick).is_some_and(|t| t <= tick) {
            self.timed.pop_front().map(|e| e.command)
        } else {
            None
        }
    }

    pub fn pop_answer(&mut self) -> Option<Command> {
        self.answers.pop_front().map(|e| e.command)
    }

    pub fn has_timed(&self) -> bool {
        !self.timed.is_empty()
    }

    pub fn has_answers(&self) -> bool {
        !self.answers.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.timed.is_empty() && self.answers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.timed.len() + self.answers.len()
    }

    /// Parses a scripted command stream: one JSON entry per line, blank lines
    /// and `#` comments ignored.
    pub fn parse_jsonl(text: &str) -> Result<Self, (usize, String)> {
        let mut q = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: CommandEntry = serde_json::from_str(line).map_err(|e| (i + 1, e.to_string()))?;
            if let Command::Demonstrate { waypoints, .. } = &entry.command {
                if waypoints.is_empty() {
                    return Err((i + 1, "demonstrate needs at least one waypoint".into()));
                }
            }
            q.push(entry);
        }
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timed_entries_wait_for_their_tick() {
        let mut q = CommandQueue::from_entries([
            CommandEntry::at(5, Command::Abort),
            CommandEntry::at(2, Command::AnomalyFlag),
            CommandEntry::answer(Command::Approve),
        ]);
        assert_eq!(q.pop_due(1), None);
        assert_eq!(q.pop_due(2), Some(Command::AnomalyFlag));
        assert_eq!(q.pop_due(4), None);
        assert_eq!(q.pop_answer(), Some(Command::Approve));
        assert_eq!(q.pop_due(9), Some(Command::Abort));
        assert!(q.is_empty());
    }

    #[test]
    fn duplicate_keys_are_dropped() {
        let mut q = CommandQueue::new();
        let e = CommandEntry { at_tick: None, idempotency_key: Some("k1".into()), command: Command::Approve };
        assert!(q.push(e.clone()));
        assert!(!q.push(e));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn scripted_stream_parses() {
        let text = r#"
# user flags an anomaly at tick 3, then approves
{"atTick": 3, "command": {"kind": "anomalyFlag"}}
{"command": {"kind": "approve"}}
{"command": {"kind": "demonstrate", "waypoints": [{"t": 0.0, "pose": {"position": [0,0,0.4], "orientation": [0,1,0,0]}, "gripper": 0}]}}
"#;
        let q = CommandQueue::parse_jsonl(text).unwrap();
        assert_eq!(q.len(), 3);
        assert!(CommandQueue::parse_jsonl(r#"{"command": {"kind": "demonstrate", "waypoints": []}}"#).is_err());
        assert_eq!(CommandQueue::parse_jsonl("{bad").unwrap_err().0, 1);
    }
}
