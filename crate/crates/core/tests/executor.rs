mod common;

use common::{board, peg_task, provider, recovery_queue, teach_peg_b};
use switchboard_core::evalkit::{decision_success, task_success, Goal};
use switchboard_core::executor::{
    read_rollout, run_episode, write_rollout, AnomalyGate, AnomalySource, Command, CommandEntry, CommandQueue, Episode,
    Event, ExecutorError, OutcomeStatus, SimConfig, TickStatus,
};
use switchboard_core::geometry::Pose;
use switchboard_core::graph::{PartId, TrialKind};

#[test]
fn ideal_replay_follows_the_demonstration() {
    let mut task = peg_task(SimConfig::ideal());
    let reference = task.graph.part(PartId(0)).unwrap().reference().clone();
    let scene = board("A", "closed", 9);
    let rollout = run_episode(&mut task, &provider(), &scene, CommandQueue::new(), None).unwrap();
    assert_eq!(rollout.outcome.status, OutcomeStatus::Done);
    assert_eq!(rollout.switch_events().count(), 0);
    let poses = rollout.step_poses();
    assert_eq!(poses.len(), reference.steps.len());
    for ((tau, pose), step) in poses.iter().zip(&reference.steps) {
        assert!(pose.distance(&step.pose) < 0.01, "tau {tau}");
    }
    // the replay is saved as an execution trial
    let part = task.graph.part(PartId(0)).unwrap();
    assert_eq!(part.trials.len(), 2);
    assert_eq!(part.trials[1].kind, TrialKind::Execution);
    assert!(decision_success(&rollout, &[PartId(0)]));
    assert!(task_success(&rollout, &scene, Goal::PegInBowl));
}

#[test]
fn reruns_are_bit_identical() {
    let task = peg_task(SimConfig::default());
    let scene = board("A", "closed", 4);
    let runs: Vec<_> = (0..3)
        .map(|_| run_episode(&mut task.clone(), &provider(), &scene, CommandQueue::new(), None).unwrap())
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn far_attractor_freezes_task_time() {
    let mut task = peg_task(SimConfig::default());
    let mut scene = board("A", "closed", 4);
    scene.robot_pose = Pose::looking_down([0.3, 0.0, 0.45]);
    let v_max = task.config.exec.sim.v_max;
    let provider = provider();
    let mut episode = Episode::new(&mut task, &provider, &scene, CommandQueue::new()).unwrap();
    let mut last = scene.robot_pose;
    for _ in 0..5 {
        assert_eq!(episode.tick().unwrap(), TickStatus::Running);
        let now = episode.state().pose;
        assert!((now.distance(&last) - v_max).abs() < 1e-12);
        assert_eq!(episode.state().tau, 0);
        last = now;
    }
    while episode.tick().unwrap() != TickStatus::Finished {}
    let rollout = episode.into_rollout();
    for w in rollout.ticks.windows(2) {
        assert!(w[1].pose.distance(&w[0].pose) <= v_max + 1e-12);
        assert!(w[1].tau >= w[0].tau);
    }
}

#[test]
fn unanswered_anomaly_deadlocks() {
    let mut task = peg_task(SimConfig::ideal());
    let err = run_episode(&mut task, &provider(), &board("B", "closed", 2), CommandQueue::new(), None).unwrap_err();
    assert!(matches!(err, ExecutorError::Deadlock { .. }));
}

#[test]
fn teaching_a_branch_then_switching() {
    let mut task = peg_task(SimConfig::ideal());
    let before =
        run_episode(&mut task.clone(), &provider(), &board("A", "closed", 5), CommandQueue::new(), None).unwrap();
    let taught = teach_peg_b(&mut task);
    assert_eq!(taught.outcome.status, OutcomeStatus::Taught);
    let anomalies: Vec<_> = taught.events.iter().filter(|e| matches!(e, Event::Anomaly { .. })).collect();
    assert_eq!(anomalies.len(), 1);
    let Some(Event::Branch { tau, ds, root, new_part }) =
        taught.events.iter().find(|e| matches!(e, Event::Branch { .. }))
    else {
        panic!("no branch event")
    };
    assert_eq!(task.graph.parts.len(), 3);
    assert_eq!(task.graph.decision_states.len(), 1);
    let d = task.graph.ds(*ds).unwrap();
    assert_eq!(d.permitted, vec![*root, *new_part]);
    assert_eq!((d.window.start, d.window.end), (*tau, tau + 10));
    assert!(task.graph.validate().is_empty());

    // the original scene still replays the original trajectory
    let after =
        run_episode(&mut task.clone(), &provider(), &board("A", "closed", 5), CommandQueue::new(), None).unwrap();
    assert_eq!(after.switch_events().count(), 0);
    assert_eq!(after.outcome.status, OutcomeStatus::Done);
    assert_eq!(before.step_poses(), after.step_poses());

    let scene_b = board("B", "closed", 12);
    let run_b = run_episode(&mut task.clone(), &provider(), &scene_b, CommandQueue::new(), None).unwrap();
    let switches: Vec<_> = run_b.switch_events().collect();
    assert_eq!(switches.len(), 1);
    let Event::Switch { tau: t_switch, to, .. } = switches[0] else { unreachable!() };
    assert_eq!(to, new_part);
    assert!(d.window.contains(*t_switch));
    assert!(decision_success(&run_b, &[PartId(0), *root, *new_part]));
    assert!(task_success(&run_b, &scene_b, Goal::PegInBowl));
    assert!(!task_success(&after, &scene_b, Goal::PegInBowl));
}

#[test]
fn every_switch_targets_an_eligible_permitted_part() {
    let mut task = peg_task(SimConfig::default());
    teach_peg_b(&mut task);
    for (peg, seed) in [("A", 20), ("B", 21), ("B", 22)] {
        let r = run_episode(&mut task.clone(), &provider(), &board(peg, "closed", seed), CommandQueue::new(), None)
            .unwrap();
        for e in r.switch_events() {
            let Event::Switch { tau, from, to, ds } = e else { unreachable!() };
            let part = task.graph.part(*to).unwrap();
            assert!(part.offset <= *tau);
            assert!(task.graph.ds(*ds).unwrap().permitted.contains(to));
            assert!(task.graph.edges.iter().any(|edge| edge.from == *from && edge.to == *to));
        }
        for w in r.ticks.windows(2) {
            assert!(w[1].tau >= w[0].tau);
        }
    }
}

#[test]
fn refine_keeps_the_structure() {
    let mut task = peg_task(SimConfig::ideal());
    let hash = task.graph.structure_hash();
    let scene = board("absent", "closed", 3);
    let queue = CommandQueue::from_entries([CommandEntry::answer(Command::Approve)]);
    let rollout = run_episode(&mut task, &provider(), &scene, queue, None).unwrap();
    assert!(rollout.events.iter().any(|e| matches!(e, Event::Refine { .. })), "{:?}", rollout.events);
    assert_eq!(rollout.outcome.status, OutcomeStatus::Done);
    assert_eq!(task.graph.structure_hash(), hash);
    let part = task.graph.part(PartId(0)).unwrap();
    assert_eq!(part.trials.len(), 2);
    // the refined trial covers the whole replay
    assert_eq!(part.trials[1].steps.len(), part.trials[0].steps.len());
    // and the context is now familiar
    let again =
        run_episode(&mut task.clone(), &provider(), &board("absent", "closed", 8), CommandQueue::new(), None).unwrap();
    assert_eq!(again.outcome.status, OutcomeStatus::Done);
}

#[test]
fn demonstration_far_from_the_robot_is_rejected() {
    let mut task = peg_task(SimConfig::ideal());
    let scene = board("B", "closed", 2);
    let far =
        switchboard_core::evalkit::scenario::waypoint(0.0, [0.3, 0.3, 0.3], switchboard_core::graph::Gripper::Open);
    let queue = CommandQueue::from_entries([
        CommandEntry::answer(Command::Demonstrate { waypoints: vec![far], from_current: false }),
        CommandEntry::answer(Command::Abort),
    ]);
    let parts = task.graph.parts.len();
    let rollout = run_episode(&mut task, &provider(), &scene, queue, None).unwrap();
    assert!(rollout.events.iter().any(|e| matches!(e, Event::DemonstrationRejected { .. })));
    assert_eq!(rollout.outcome.status, OutcomeStatus::Aborted);
    assert_eq!(task.graph.parts.len(), parts);
}

#[test]
fn user_flags_respect_the_gate() {
    for (gate, expect) in [(AnomalyGate::User, true), (AnomalyGate::Either, true), (AnomalyGate::System, false)] {
        let mut task = peg_task(SimConfig::ideal());
        task.config.exec.gate = gate;
        let queue = CommandQueue::from_entries([
            CommandEntry::at(5, Command::AnomalyFlag),
            CommandEntry::answer(Command::Approve),
        ]);
        let rollout = run_episode(&mut task, &provider(), &board("A", "closed", 3), queue, None).unwrap();
        let flagged =
            rollout.events.iter().any(|e| matches!(e, Event::Anomaly { source: AnomalySource::User, tau: 5, .. }));
        assert_eq!(flagged, expect, "{gate:?}");
        assert_eq!(rollout.outcome.status, OutcomeStatus::Done);
    }
}

#[test]
fn system_gate_off_ignores_novelty() {
    let mut task = peg_task(SimConfig::ideal());
    task.config.exec.gate = AnomalyGate::User;
    let rollout = run_episode(&mut task, &provider(), &board("B", "closed", 2), CommandQueue::new(), None).unwrap();
    assert_eq!(rollout.outcome.status, OutcomeStatus::Done);
}

#[test]
fn pause_waits_for_approval() {
    let mut task = peg_task(SimConfig::ideal());
    let queue = CommandQueue::from_entries([
        CommandEntry::at(3, Command::Pause),
        CommandEntry::at(8, Command::Approve),
        CommandEntry::at(20, Command::Abort),
    ]);
    let rollout = run_episode(&mut task, &provider(), &board("A", "closed", 3), queue, None).unwrap();
    assert!(rollout.events.iter().any(|e| matches!(e, Event::Paused { tau: 3 })));
    assert!(rollout.events.iter().any(|e| matches!(e, Event::Resumed { .. })));
    assert_eq!(rollout.outcome.status, OutcomeStatus::Aborted);
    // no ticks are recorded while paused
    let taus: Vec<u32> = rollout.ticks.iter().map(|t| t.tau).collect();
    assert_eq!(taus.len(), 20 - 5);
    // an aborted replay stores nothing
    assert_eq!(task.graph.part(PartId(0)).unwrap().trials.len(), 1);
}

#[test]
fn rollout_jsonl_round_trip() {
    let mut task = peg_task(SimConfig::default());
    let scene = board("B", "closed", 2);
    let rollout = run_episode(&mut task, &provider(), &scene, recovery_queue(&scene), Some(vec![PartId(0)])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.jsonl");
    write_rollout(&rollout, &path).unwrap();
    assert_eq!(read_rollout(&path).unwrap(), rollout);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), rollout.ticks.len() + 1);
}
