mod common;

use std::time::Duration;

use common::*;
use futures_util::StreamExt;
use serde_json::{json, Value};
use switchboard_service::{router, ServiceConfig};
use tokio_tungstenite::tungstenite::Message;

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn listen(config: ServiceConfig) -> (String, axum::Router) {
    let (state, app) = app_with(config);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
    (format!("ws://{addr}"), app)
}

async fn connect(base: &str, session: &str, query: &str) -> Socket {
    let (socket, _) =
        tokio_tungstenite::connect_async(format!("{base}/sessions/{session}/stream{query}")).await.unwrap();
    socket
}

/// Next JSON message, or None once the server closes the stream.
async fn next(socket: &mut Socket) -> Option<Value> {
    loop {
        match socket.next().await? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

async fn drain(socket: &mut Socket) -> Vec<Value> {
    let mut out = Vec::new();
    while let Some(m) = next(socket).await {
        out.push(m);
    }
    out
}

fn assert_ordered(messages: &[Value]) {
    for pair in messages.windows(2) {
        assert_eq!(pair[1]["seq"].as_u64().unwrap(), pair[0]["seq"].as_u64().unwrap() + 1);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn anomaly_prompt_then_live_demonstration() {
    let (base, app) = listen(ServiceConfig { tick_interval: Duration::from_millis(2), ..Default::default() }).await;
    create_peg_task(&app, "peg").await;
    let (_, s) = call(&app, "POST", "/sessions", Some(json!({ "taskId": "peg", "sceneId": "b" }))).await;
    let id = s["sessionId"].as_str().unwrap().to_string();
    let mut socket = connect(&base, &id, "?from=0").await;

    let snapshot = next(&mut socket).await.unwrap();
    assert_eq!(snapshot["type"], "snapshot");
    assert_eq!(snapshot["version"], 1);
    let mut seen = Vec::new();
    loop {
        let m = next(&mut socket).await.expect("stream ended before the prompt");
        let prompt = m["type"] == "event" && m["name"] == "anomaly-prompt";
        seen.push(m);
        if prompt {
            break;
        }
    }
    assert_eq!(seen[0]["seq"], 0);
    let tick = &seen.iter().rev().find(|m| m["type"] == "tick").unwrap();
    let grid = tick["patchGrid"]["grid"].as_u64().unwrap() as usize;
    assert_eq!(tick["patchGrid"]["cells"].as_array().unwrap().len(), grid * grid);
    assert!(tick["scene"]["factors"]["peg"] == "B");

    // nothing moves while the session waits for the user
    let quiet = tokio::time::timeout(Duration::from_millis(300), next(&mut socket)).await;
    assert!(quiet.is_err(), "message while awaiting the user: {quiet:?}");
    let (_, status) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!((status["phase"].as_str(), status["pendingAnomaly"].as_bool()), (Some("awaiting-user"), Some(true)));

    let (_, ack) = call(&app, "POST", &format!("/sessions/{id}/commands"), Some(json!(recovery(&board("B", 2))))).await;
    assert_eq!(ack["accepted"], true);
    seen.extend(drain(&mut socket).await);
    assert_ordered(&seen);
    let names: Vec<&str> = seen.iter().filter(|m| m["type"] == "event").map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(names.iter().filter(|n| **n == "anomaly-prompt").count(), 1);
    assert!(names.contains(&"branch-created"), "{names:?}");
    let last = seen.last().unwrap();
    assert_eq!(last["type"], "finished");
    assert_eq!(last["outcome"]["status"], "taught");
    assert_eq!(last["rollout"], 0);
    socket.close(None).await.ok();
}

#[tokio::test(flavor = "multi_thread")]
async fn reconnecting_clients_get_a_snapshot_and_the_backlog() {
    let (base, app) = listen(ServiceConfig::default()).await;
    create_peg_task(&app, "peg").await;
    let (_, s) = call(&app, "POST", "/sessions", Some(json!({ "taskId": "peg", "sceneId": "default" }))).await;
    let id = s["sessionId"].as_str().unwrap().to_string();
    wait_finished(&app, &id).await;

    let mut full = connect(&base, &id, "?from=0").await;
    let all = drain(&mut full).await;
    assert_eq!(all[0]["type"], "snapshot");
    let log = &all[1..];
    assert_ordered(log);
    assert_eq!(log[0]["seq"], 0);
    assert_eq!(all[0]["seq"].as_u64().unwrap(), log.len() as u64);
    assert_eq!(log.last().unwrap()["type"], "finished");
    let ticks = log.iter().filter(|m| m["type"] == "tick").count();
    assert_eq!(ticks as u64, log.last().unwrap()["outcome"]["ticks"].as_u64().unwrap());

    let mut tail = connect(&base, &id, "?from=5").await;
    let part = drain(&mut tail).await;
    assert_eq!(&part[1..], &log[5..]);

    let mut late = connect(&base, &id, "").await;
    let only = drain(&mut late).await;
    assert_eq!(only.len(), 1);
    assert_eq!(only[0]["status"]["finished"], true);
    assert_eq!(
        only[0]["lastTick"],
        log.iter()
            .rev()
            .find(|m| m["type"] == "tick")
            .map(|m| {
                let mut m = m.clone();
                let o = m.as_object_mut().unwrap();
                o.remove("type");
                o.remove("seq");
                o.remove("version");
                m
            })
            .unwrap()
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn unknown_session_stream_is_not_found() {
    let (base, _) = listen(ServiceConfig::default()).await;
    let err = tokio_tungstenite::connect_async(format!("{base}/sessions/zz/stream")).await.unwrap_err();
    assert!(err.to_string().contains("404"), "{err}");
}
