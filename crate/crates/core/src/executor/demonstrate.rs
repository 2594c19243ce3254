use super::{ExecutorError, Waypoint};
use crate::embeddings::{FrameStore, ObservationProvider, SceneState};
use crate::geometry::{lerp3, slerp, Pose, Workspace};
use crate::graph::{FrameKey, Gripper, PartId, TimeStep, Trial, TrialKind};

/// Resamples keyframes at `control_hz`: `max(1, round(T * hz))` samples
/// evenly spaced over the keyframe span, both ends included. Positions are
/// interpolated linearly, orientations by slerp; the gripper holds the state
/// of the latest keyframe at or before each sample.
pub fn demonstrate(
    waypoints: &[Waypoint],
    control_hz: f64,
    workspace: &Workspace,
) -> Result<Vec<(Pose, Gripper)>, ExecutorError> {
    let first = waypoints.first().ok_or(ExecutorError::EmptyDemonstration)?;
    for (index, w) in waypoints.iter().enumerate() {
        let reason = if !w.t.is_finite() {
            Some("time is not finite".to_string())
        } else if index > 0 && w.t < waypoints[index - 1].t {
            Some("times must not decrease".to_string())
        } else if !w.pose.is_valid() {
            Some("pose is not finite or its quaternion is not unit".to_string())
        } else if !workspace.contains(&w.pose.position) {
            Some(format!("position {:?} is outside the workspace", w.pose.position))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(ExecutorError::InvalidWaypoint { index, reason });
        }
    }
    let t0 = first.t;
    let span = waypoints.last().expect("non-empty").t - t0;
    let n = ((span * control_hz).round() as usize).max(1);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let t = if n == 1 { t0 } else { t0 + span * i as f64 / (n - 1) as f64 };
        while seg + 1 < waypoints.len() - 1 && waypoints[seg + 1].t <= t {
            seg += 1;
        }
        let a = &waypoints[seg];
        let b = waypoints.get(seg + 1).unwrap_or(a);
        let s = if b.t > a.t { ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0) } else { 0.0 };
        let pose =
            Pose::new(lerp3(&a.pose.position, &b.pose.position, s), slerp(&a.pose.orientation, &b.pose.orientation, s));
        let gripper = waypoints.iter().rev().find(|w| w.t <= t).map_or(first.gripper, |w| w.gripper);
        out.push((pose, gripper));
    }
    Ok(out)
}

/// Renders observations along recorded poses and builds the trial.
#[allow(clippy::too_many_arguments)]
pub fn record_trial(
    samples: &[(Pose, Gripper)],
    part: PartId,
    trial_index: u32,
    kind: TrialKind,
    scene: &SceneState,
    provider: &dyn ObservationProvider,
    frames: &mut FrameStore,
) -> Result<Trial, ExecutorError> {
    let mut steps = Vec::with_capacity(samples.len());
    for (k, (pose, gripper)) in samples.iter().enumerate() {
        let key = FrameKey::new(part, trial_index, k as u32);
        frames.insert(key, provider.observe(key, scene, pose)?);
        steps.push(TimeStep { pose: *pose, gripper: *gripper, observation: key });
    }
    Ok(Trial { index: trial_index, kind, start: 0, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wp(t: f64, x: f64, g: Gripper) -> Waypoint {
        Waypoint { t, pose: Pose::looking_down([x, 0.0, 0.4]), gripper: g }
    }

    #[test]
    fn straight_line_second_at_ten_hz() {
        let out =
            demonstrate(&[wp(0.0, 0.0, Gripper::Open), wp(1.0, 0.09, Gripper::Open)], 10.0, &Workspace::default())
                .unwrap();
        assert_eq!(out.len(), 10);
        for (i, (p, _)) in out.iter().enumerate() {
            assert!((p.position[0] - 0.01 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_waypoints_hold_pose() {
        let out = demonstrate(&[wp(0.0, 0.1, Gripper::Open), wp(2.0, 0.1, Gripper::Open)], 10.0, &Workspace::default())
            .unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|(p, _)| p.position == [0.1, 0.0, 0.4]));
    }

    #[test]
    fn gripper_switches_at_keyframe_time() {
        let out = demonstrate(
            &[wp(0.0, 0.0, Gripper::Open), wp(0.5, 0.05, Gripper::Closed), wp(1.0, 0.1, Gripper::Closed)],
            10.0,
            &Workspace::default(),
        )
        .unwrap();
        let first_closed = out.iter().position(|(_, g)| *g == Gripper::Closed).unwrap();
        // sample i sits at t = i / 9
        assert_eq!(first_closed, 5);
    }

    #[test]
    fn out_of_workspace_names_the_waypoint() {
        let err = demonstrate(&[wp(0.0, 0.0, Gripper::Open), wp(1.0, 2.0, Gripper::Open)], 10.0, &Workspace::default());
        assert!(matches!(err, Err(ExecutorError::InvalidWaypoint { index: 1, .. })));
        assert!(matches!(demonstrate(&[], 10.0, &Workspace::default()), Err(ExecutorError::EmptyDemonstration)));
    }
}
