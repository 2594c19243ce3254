use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;
use switchboard_core::embeddings::SceneState;
use switchboard_core::evalkit::scenario::{peg_demo, peg_recovery, waypoint};
use switchboard_core::executor::{read_rollout, Command as UserCommand, CommandEntry, OutcomeStatus, Waypoint};
use switchboard_core::graph::{Gripper, PartId};
use switchboard_core::library::load_library;

fn switchboard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_switchboard")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = switchboard(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scene file listing only factors and seed; the layout is filled in on load.
fn scene_file(dir: &Path, name: &str, peg: &str, seed: u64) -> (PathBuf, SceneState) {
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, json!({ "factors": { "peg": peg, "door": "closed" }, "seed": seed }).to_string()).unwrap();
    (path, SceneState::taskboard(&[("peg", peg), ("door", "closed")], seed).unwrap())
}

fn jsonl<T: serde::Serialize>(dir: &Path, name: &str, items: &[T]) -> PathBuf {
    let path = dir.join(name);
    let text: String = items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect();
    std::fs::write(&path, text).unwrap();
    path
}

/// Peg library taught on board A, plus a scripted recovery for board B.
fn peg_library(dir: &Path) -> PathBuf {
    let (scene_a, a) = scene_file(dir, "a", "A", 1);
    let demo = jsonl(dir, "demo.jsonl", &peg_demo(&a).unwrap());
    let lib = dir.join("peg");
    let out = ok(&["demo", "--task", "peg", "--scene", s(&scene_a), "--demo", s(&demo), "--out", s(&lib)]);
    assert!(out.contains("1 part"), "{out}");
    lib
}

fn teach_b(dir: &Path, lib: &Path) -> PathBuf {
    let (scene_b, b) = scene_file(dir, "b", "B", 2);
    let recovery =
        CommandEntry::answer(UserCommand::Demonstrate { waypoints: peg_recovery(&b).unwrap(), from_current: true });
    let cmds = jsonl(dir, "teach.jsonl", &[recovery]);
    let rollout = dir.join("teach.jsonl.rollout");
    let out = ok(&["run", "--task", s(lib), "--scene", s(&scene_b), "--commands", s(&cmds), "--rollout", s(&rollout)]);
    assert!(out.contains("Taught") && out.contains("library updated: 3 parts"), "{out}");
    rollout
}

#[test]
fn teach_replay_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lib = peg_library(d);
    teach_b(d, &lib);

    let runs = d.join("runs");
    std::fs::create_dir(&runs).unwrap();
    for (i, (peg, seed)) in [("A", 11), ("A", 12), ("B", 13), ("B", 14)].into_iter().enumerate() {
        let (scene, _) = scene_file(d, &format!("s{i}"), peg, seed);
        let rollout = runs.join(format!("r{i}.jsonl"));
        let expected = if peg == "A" { "0,1" } else { "0,1,2" };
        let out = ok(&[
            "run",
            "--task",
            s(&lib),
            "--scene",
            s(&scene),
            "--rollout",
            s(&rollout),
            "--expected",
            expected,
            "--no-save",
        ]);
        assert!(out.starts_with("Done"), "{out}");
        assert!(runs.join(format!("r{i}.swem")).is_file());
        let r = read_rollout(&rollout).unwrap();
        let want: Vec<PartId> = expected.split(',').map(|p| PartId(p.parse().unwrap())).collect();
        assert_eq!(r.outcome.executed_variant, want);
    }
    assert_eq!(load_library(&lib).unwrap().graph.parts.len(), 3);

    let report = d.join("report");
    let out = ok(&[
        "eval",
        "--rollouts",
        s(&runs),
        "--task",
        s(&lib),
        "--method",
        "prototype-concat,prototype-mean",
        "--out",
        s(&report),
    ]);
    assert!(out.contains("prototype-concat: 1 DS") && out.contains("prototype-mean: 1 DS"), "{out}");
    for f in ["report.json", "results.csv", "histogram.csv", "summary.txt"] {
        assert!(report.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(report.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let swapped = d.join("swapped");
    ok(&["eval", "--rollouts", s(&runs), "--task", s(&lib), "--out", s(&swapped), "--split", "swapped"]);
    assert!(swapped.join("results.csv").is_file());
}

#[test]
fn branch_adds_a_successor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lib = peg_library(d);
    teach_b(d, &lib);
    let task = load_library(&lib).unwrap();
    let ds = &task.graph.decision_states[0];
    let root = &task.graph.parts[&ds.root_part];
    let start = root.trials[0].steps[(ds.t_ds - root.offset) as usize].pose;
    let demo: Vec<Waypoint> = vec![
        Waypoint { t: 0.0, pose: start, gripper: Gripper::Open },
        waypoint(1.5, [0.10, -0.10, 0.20], Gripper::Open),
    ];
    let demo = jsonl(d, "branch.jsonl", &demo);
    let (scene, _) = scene_file(d, "c", "absent", 4);
    let out =
        ok(&["branch", "--task", s(&lib), "--ds", &ds.id.0.to_string(), "--demo", s(&demo), "--scene", s(&scene)]);
    assert!(out.contains("part 3 added"), "{out}");
    let after = load_library(&lib).unwrap();
    assert_eq!(after.graph.decision_states[0].permitted.len(), 3);
    assert!(after.graph.validate().is_empty());

    let bad = switchboard(&["branch", "--task", s(&lib), "--ds", "9", "--demo", s(&demo), "--scene", s(&scene)]);
    assert!(!bad.status.success());
}

#[test]
fn scripted_aborts_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let lib = peg_library(d);
    let cmds = jsonl(d, "abort.jsonl", &[CommandEntry::at(4, UserCommand::Abort)]);
    let (scene, _) = scene_file(d, "a2", "A", 3);
    let rollout = d.join("abort.jsonl.out");
    ok(&[
        "run",
        "--task",
        s(&lib),
        "--scene",
        s(&scene),
        "--commands",
        s(&cmds),
        "--rollout",
        s(&rollout),
        "--gate",
        "user",
    ]);
    let r = read_rollout(&rollout).unwrap();
    assert_eq!(r.outcome.status, OutcomeStatus::Aborted);
    assert_eq!(load_library(&lib).unwrap().graph.parts[&PartId(0)].trials.len(), 1);

    // an unanswered anomaly cannot be resolved headlessly
    let (scene_b, _) = scene_file(d, "b", "B", 2);
    let stuck = switchboard(&["run", "--task", s(&lib), "--scene", s(&scene_b), "--rollout", s(&rollout)]);
    assert!(!stuck.status.success());
    assert!(String::from_utf8_lossy(&stuck.stderr).contains("command stream is exhausted"));
}

#[test]
fn console_modality_and_no_serve_refuse() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = scene_file(dir.path(), "a", "A", 1);
    let out = switchboard(&["demo", "--task", "t", "--scene", s(&scene), "--modality", "console", "--out", "x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("switchboard serve"));
    let out = switchboard(&["--no-serve", "serve"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-serve"));
}

#[test]
fn labelgrowth_writes_the_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    ok(&["labelgrowth", "--classes", "2..3", "--method", "mean", "--out", s(&out)]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "classes,method,decision_accuracy,frame_accuracy,train_accuracy,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,prototype-mean,"));
    assert!(!switchboard(&["labelgrowth", "--classes", "1..9", "--out", s(&out)]).status.success());
}
