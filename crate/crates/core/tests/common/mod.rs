#![allow(dead_code)]

use switchboard_core::embeddings::{EncoderConfig, SceneState, SyntheticEncoder, SyntheticProvider};
use switchboard_core::evalkit::scenario::{peg_demo, peg_recovery};
use switchboard_core::executor::{run_episode, Command, CommandEntry, CommandQueue, Rollout, SimConfig};
use switchboard_core::task::{Task, TaskConfig};

pub fn provider() -> SyntheticProvider {
    SyntheticProvider::new(SyntheticEncoder::new(EncoderConfig::default()))
}

pub fn board(peg: &str, door: &str, seed: u64) -> SceneState {
    SceneState::taskboard(&[("peg", peg), ("door", door)], seed).unwrap()
}

/// Peg task demonstrated on the peg-A board.
pub fn peg_task(sim: SimConfig) -> Task {
    let mut config = TaskConfig::default();
    config.exec.sim = sim;
    let scene = board("A", "closed", 1);
    Task::from_waypoints("peg", &peg_demo(&scene).unwrap(), &scene, &provider(), config).unwrap()
}

/// Answers the first anomaly with a recovery demonstration toward the peg of
/// `scene`, started from the paused pose.
pub fn recovery_queue(scene: &SceneState) -> CommandQueue {
    CommandQueue::from_entries([CommandEntry::answer(Command::Demonstrate {
        waypoints: peg_recovery(scene).unwrap(),
        from_current: true,
    })])
}

/// Teaches the peg-B branch on `task` and returns the teaching rollout.
pub fn teach_peg_b(task: &mut Task) -> Rollout {
    let scene = board("B", "closed", 2);
    run_episode(task, &provider(), &scene, recovery_queue(&scene), None).unwrap()
}
