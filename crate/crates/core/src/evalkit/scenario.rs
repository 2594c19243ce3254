//! Scripted demonstrations and factor-based goal checks for the simulated
//! task board.

use serde::{Deserialize, Serialize};

use crate::embeddings::{object_radius, SceneState};
use crate::executor::{Rollout, Waypoint};
use crate::geometry::Pose;
use crate::graph::Gripper;

pub const HOVER_Z: f64 = 0.20;
/// Height of the gripper above an object's top when grasping or touching.
pub const GRASP_CLEARANCE: f64 = 0.04;

pub fn home_pose() -> Pose {
    Pose::looking_down([0.0, 0.0, 0.45])
}

pub fn waypoint(t: f64, position: [f64; 3], gripper: Gripper) -> Waypoint {
    Waypoint { t, pose: Pose::looking_down(position), gripper }
}

fn object_position(scene: &SceneState, name: &str) -> Option<[f64; 3]> {
    scene.object_poses.get(name).map(|p| p.position)
}

/// Keyframes that pick the peg at `peg` and drop it into the bowl, starting
/// at `t0` seconds.
fn pick_and_place(t0: f64, peg: [f64; 3], bowl: [f64; 3]) -> Vec<Waypoint> {
    let grasp = [peg[0], peg[1], peg[2] + GRASP_CLEARANCE];
    let above_peg = [peg[0], peg[1], HOVER_Z];
    let above_bowl = [bowl[0], bowl[1], HOVER_Z];
    let drop = [bowl[0], bowl[1], 0.10];
    use Gripper::{Closed, Open};
    vec![
        waypoint(t0 + 2.0, above_peg, Open),
        waypoint(t0 + 3.0, grasp, Open),
        waypoint(t0 + 3.3, grasp, Closed),
        waypoint(t0 + 4.3, above_peg, Closed),
        waypoint(t0 + 6.0, above_bowl, Closed),
        waypoint(t0 + 6.5, drop, Closed),
        waypoint(t0 + 6.8, drop, Open),
    ]
}

/// Full demonstration of the peg task from the home pose for the peg
/// placement of `scene`.
pub fn peg_demo(scene: &SceneState) -> Option<Vec<Waypoint>> {
    let peg = object_position(scene, "peg")?;
    let bowl = object_position(scene, "bowl")?;
    let mut out = vec![Waypoint { t: 0.0, pose: home_pose(), gripper: Gripper::Open }];
    out.extend(pick_and_place(0.0, peg, bowl));
    Some(out)
}

/// Recovery demonstration to be started from wherever the robot stopped:
/// waypoint times are relative to that pose.
pub fn peg_recovery(scene: &SceneState) -> Option<Vec<Waypoint>> {
    let peg = object_position(scene, "peg")?;
    let bowl = object_position(scene, "bowl")?;
    let mut out = pick_and_place(-1.0, peg, bowl);
    out.retain(|w| w.t > 0.0);
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Goal {
    /// The peg is grasped where it lies and released over the bowl.
    PegInBowl,
    /// The probe point is touched; a closed door must be visited first.
    ProbeTouch,
    /// The gripper circles the cable post while closed.
    CableWrap { loops: f64 },
}

fn planar_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn near_top(pose: &Pose, object: &[f64; 3], radius: f64) -> bool {
    planar_distance(&pose.position, object) <= radius && pose.position[2] <= object[2] + 2.0 * GRASP_CLEARANCE
}

/// Checks the goal against the executed trajectory and the scene factors.
pub fn task_success(rollout: &Rollout, scene: &SceneState, goal: Goal) -> bool {
    let ticks = &rollout.ticks;
    match goal {
        Goal::PegInBowl => {
            let (Some(peg), Some(bowl)) = (object_position(scene, "peg"), object_position(scene, "bowl")) else {
                return false;
            };
            let grasp = ticks.windows(2).position(|w| {
                w[0].gripper == Gripper::Open
                    && w[1].gripper == Gripper::Closed
                    && near_top(&w[1].pose, &peg, object_radius("peg"))
            });
            let Some(g) = grasp else { return false };
            ticks[g + 1..].windows(2).any(|w| {
                w[0].gripper == Gripper::Closed
                    && w[1].gripper == Gripper::Open
                    && planar_distance(&w[1].pose.position, &bowl) <= object_radius("bowl")
            })
        }
        Goal::ProbeTouch => {
            let Some(probe) = object_position(scene, "probe") else { return false };
            let Some(touch) = ticks.iter().position(|t| near_top(&t.pose, &probe, 0.02)) else { return false };
            match (scene.factor("door"), object_position(scene, "door")) {
                (Some("closed"), Some(door)) => ticks[..touch].iter().any(|t| near_top(&t.pose, &door, 0.04)),
                _ => true,
            }
        }
        Goal::CableWrap { loops } => {
            let Some(post) = object_position(scene, "cable_post") else { return false };
            let mut total = 0.0;
            let mut last: Option<f64> = None;
            for t in ticks {
                let (dx, dy) = (t.pose.position[0] - post[0], t.pose.position[1] - post[1]);
                if t.gripper != Gripper::Closed || dx.hypot(dy) > 0.15 || dx.hypot(dy) < 1e-6 {
                    last = None;
                    continue;
                }
                let a = dy.atan2(dx);
                if let Some(prev) = last {
                    let mut d = a - prev;
                    while d > std::f64::consts::PI {
                        d -= 2.0 * std::f64::consts::PI;
                    }
                    while d < -std::f64::consts::PI {
                        d += 2.0 * std::f64::consts::PI;
                    }
                    total += d;
                }
                last = Some(a);
            }
            total.abs() >= loops * 2.0 * std::f64::consts::PI
        }
    }
}
