#![allow(dead_code)]

use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use switchboard_core::embeddings::SceneState;
use switchboard_core::evalkit::scenario::{peg_demo, peg_recovery};
use switchboard_core::executor::{Command, CommandEntry};
use switchboard_service::{router, AppState, ServiceConfig};
use tower::ServiceExt;

pub fn board(peg: &str, seed: u64) -> SceneState {
    SceneState::taskboard(&[("peg", peg), ("door", "closed")], seed).unwrap()
}

pub fn app_with(config: ServiceConfig) -> (AppState, Router) {
    let state = AppState::load(config).unwrap();
    (state.clone(), router(state))
}

pub fn app() -> (AppState, Router) {
    app_with(ServiceConfig::default())
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call_raw(app, method, uri, body.map(|b| b.to_string())).await;
    let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
    (status, value)
}

/// Peg task demonstrated on board A, with scenes "default" (A) and "b".
pub async fn create_peg_task(app: &Router, id: &str) {
    let scene = board("A", 1);
    let body = json!({ "id": id, "scene": scene, "demonstration": peg_demo(&scene).unwrap() });
    let (status, v) = call(app, "POST", "/tasks", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let (status, v) =
        call(app, "POST", &format!("/tasks/{id}/scenes"), Some(json!({ "id": "b", "scene": board("B", 2) }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
}

pub fn recovery(scene: &SceneState) -> CommandEntry {
    CommandEntry::answer(Command::Demonstrate { waypoints: peg_recovery(scene).unwrap(), from_current: true })
}

pub async fn wait_finished(app: &Router, session: &str) -> Value {
    for _ in 0..2000 {
        let (status, v) = call(app, "GET", &format!("/sessions/{session}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if v["finished"] == true {
            // the task is returned to the registry just before the flag is set
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {session} did not finish");
}

pub async fn wait_phase(app: &Router, session: &str, phase: &str) -> Value {
    for _ in 0..2000 {
        let (_, v) = call(app, "GET", &format!("/sessions/{session}"), None).await;
        if v["phase"] == phase {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("session {session} never reached {phase}");
}
