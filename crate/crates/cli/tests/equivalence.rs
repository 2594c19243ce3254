//! The same seeded run through the CLI and through the service yields the
//! same rollout file, byte for byte.

use std::path::Path;
use std::process::Command;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use switchboard_core::embeddings::SceneState;
use switchboard_core::evalkit::scenario::{peg_demo, peg_recovery};
use switchboard_core::executor::{Command as UserCommand, CommandEntry};
use switchboard_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn write(dir: &Path, name: &str, text: String) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_switchboard")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

async fn service_rollout(
    app: &axum::Router,
    task: &str,
    scene: &SceneState,
    seed: u64,
    commands: &[CommandEntry],
) -> String {
    let (status, body) =
        call(app, "POST", &format!("/tasks/{task}/scenes"), Some(json!({ "id": "s", "scene": scene }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let body = json!({ "taskId": task, "sceneId": "s", "seed": seed, "commands": commands });
    let (status, body) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let id = serde_json::from_str::<Value>(&body).unwrap()["sessionId"].as_str().unwrap().to_string();
    for _ in 0..3000 {
        let (_, status) = call(app, "GET", &format!("/sessions/{id}"), None).await;
        if serde_json::from_str::<Value>(&status).unwrap()["finished"] == true {
            let (_, list) = call(app, "GET", &format!("/tasks/{task}/rollouts"), None).await;
            let n = serde_json::from_str::<Value>(&list).unwrap().as_array().unwrap().len() - 1;
            let (status, text) = call(app, "GET", &format!("/tasks/{task}/rollouts/{n}"), None).await;
            assert_eq!(status, StatusCode::OK);
            return text;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {id} did not finish");
}

#[tokio::test(flavor = "multi_thread")]
async fn cli_and_service_rollouts_match() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = SceneState::taskboard(&[("peg", "A"), ("door", "closed")], 1).unwrap();
    let b = SceneState::taskboard(&[("peg", "B"), ("door", "closed")], 2).unwrap();
    let demo: String = peg_demo(&a).unwrap().iter().map(|w| serde_json::to_string(w).unwrap() + "\n").collect();
    let scene_a = write(d, "a.json", serde_json::to_string(&a).unwrap());
    let scene_b = write(d, "b.json", serde_json::to_string(&b).unwrap());
    let demo = write(d, "demo.jsonl", demo);
    let lib = d.join("peg");
    cli(&["demo", "--task", "peg", "--scene", &scene_a, "--demo", &demo, "--out", lib.to_str().unwrap()]);

    let app = router(AppState::new(ServiceConfig::default()));
    let (status, body) = call(&app, "POST", "/tasks", Some(json!({ "id": "peg", "library": lib }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");

    // a teaching run answered by a scripted recovery
    let teach =
        [CommandEntry::answer(UserCommand::Demonstrate { waypoints: peg_recovery(&b).unwrap(), from_current: true })];
    let cmds = write(d, "cmds.jsonl", serde_json::to_string(&teach[0]).unwrap() + "\n");
    let out = d.join("cli.jsonl");
    cli(&[
        "run",
        "--task",
        lib.to_str().unwrap(),
        "--scene",
        &scene_b,
        "--commands",
        &cmds,
        "--seed",
        "7",
        "--rollout",
        out.to_str().unwrap(),
    ]);
    let via_service = service_rollout(&app, "peg", &b, 7, &teach).await;
    assert_eq!(std::fs::read_to_string(&out).unwrap(), via_service);

    // both libraries now hold the branch; an unattended run must agree too
    let c = SceneState::taskboard(&[("peg", "B"), ("door", "closed")], 9).unwrap();
    let scene_c = write(d, "c.json", serde_json::to_string(&c).unwrap());
    cli(&[
        "run",
        "--task",
        lib.to_str().unwrap(),
        "--scene",
        &scene_c,
        "--seed",
        "3",
        "--rollout",
        out.to_str().unwrap(),
    ]);
    let via_service = service_rollout(&app, "peg", &c, 3, &[]).await;
    assert!(via_service.lines().count() > 10);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), via_service);
}
