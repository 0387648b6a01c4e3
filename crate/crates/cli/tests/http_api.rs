use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fr_design_cli::server::{router, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_config(experiments: usize) -> Value {
    json!({
        "particles": 200,
        "experiments": experiments,
        "design_grid": {"from": 1, "to": 300, "step": 10},
        "seed": 11
    })
}

fn app(dir: &std::path::Path, static_dir: Option<std::path::PathBuf>) -> Router {
    let tick = Arc::new(AtomicU64::new(0));
    let store = Store::open(dir)
        .unwrap()
        .with_clock(Arc::new(move || tick.fetch_add(1, Ordering::SeqCst)));
    router(Arc::new(store), static_dir)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

async fn create(app: &Router, cfg: Value) -> String {
    let (st, v) = call(app, "POST", "/api/sessions", Some(cfg)).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    assert_eq!(v["status"], "awaiting-design");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_design_submit_history() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let id = create(&app, small_config(3)).await;

    let (st, p) = call(&app, "GET", &format!("/api/sessions/{id}/design"), None).await;
    assert_eq!(st, StatusCode::OK, "{p}");
    let d = p["d"].as_u64().unwrap();
    let surface = &p["surface"];
    assert_eq!(surface["designs"].as_array().unwrap().len(), 30);
    assert_eq!(surface["argmax"].as_u64().unwrap(), d);

    let (st, o) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": d, "n": 0})),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{o}");
    let probs = o["model_probabilities"].as_array().unwrap();
    assert_eq!(probs.len(), 4);
    let total: f64 = probs.iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(o["snapshots"].as_array().unwrap().len(), 4);
    assert!(
        o["snapshots"][0]["marginals"].is_array(),
        "{}",
        o["snapshots"][0]
    );

    let (st, h) = call(&app, "GET", &format!("/api/sessions/{id}/history"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h["records"].as_array().unwrap().len(), 1);
    assert_eq!(h["records"][0]["n"], 0);
    assert_eq!(h["handle"]["status"], "awaiting-design");
}

#[tokio::test]
async fn impossible_count_is_rejected_without_change() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let id = create(&app, small_config(3)).await;
    let (_, p) = call(&app, "GET", &format!("/api/sessions/{id}/design"), None).await;
    let d = p["d"].as_u64().unwrap();
    let (_, before) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;

    let (st, e) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": d, "n": d + 1})),
    )
    .await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"]["code"], "observation-out-of-range");

    let (st, e) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": 5, "n": 1})),
    )
    .await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"]["code"], "design-out-of-grid");

    let (_, after) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["handle"]["status"], "awaiting-observation");
}

#[tokio::test]
async fn observation_before_design_is_a_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let id = create(&app, small_config(1)).await;
    let (st, e) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": 1, "n": 0})),
    )
    .await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(e["error"]["code"], "conflict");

    let (_, p) = call(&app, "GET", &format!("/api/sessions/{id}/design"), None).await;
    let d = p["d"].as_u64().unwrap();
    let (st, _) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": d, "n": 1})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    let (st, e) = call(&app, "GET", &format!("/api/sessions/{id}/design"), None).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(e["error"]["code"], "session-complete");
    let (st, e) = call(
        &app,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": d, "n": 1})),
    )
    .await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(e["error"]["code"], "conflict");
}

#[tokio::test]
async fn errors_for_unknown_sessions_and_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let (st, e) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(e["error"]["code"], "unknown-session");

    let (st, e) = call(&app, "POST", "/api/sessions", Some(json!({"particles": 0}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["error"]["code"], "invalid-config");

    let (st, e) = call(
        &app,
        "POST",
        "/api/sessions",
        Some(json!({"particels": 10})),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(e["error"]["code"], "invalid-config");
}

#[tokio::test]
async fn delete_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), None);
    let a = create(&app, small_config(2)).await;
    let b = create(&app, small_config(2)).await;
    assert_ne!(a, b);
    let (_, list) = call(&app, "GET", "/api/sessions", None).await;
    assert_eq!(list.as_array().unwrap().len(), 2);
    let (st, _) = call(&app, "DELETE", &format!("/api/sessions/{a}"), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (st, _) = call(&app, "GET", &format!("/api/sessions/{a}"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert!(!dir
        .path()
        .join("sessions")
        .join(format!("{a}.json"))
        .exists());
    let (_, list) = call(&app, "GET", "/api/sessions", None).await;
    assert_eq!(list[0]["id"], b.as_str());
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let id;
    let d;
    {
        let app = app(dir.path(), None);
        id = create(&app, small_config(3)).await;
        let (_, p) = call(&app, "GET", &format!("/api/sessions/{id}/design"), None).await;
        d = p["d"].as_u64().unwrap();
    }
    let app2 = app(dir.path(), None);
    let (st, v) = call(&app2, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["handle"]["status"], "awaiting-observation");
    assert_eq!(v["pending"]["d"].as_u64().unwrap(), d);
    let (st, _) = call(
        &app2,
        "POST",
        &format!("/api/sessions/{id}/observations"),
        Some(json!({"d": d, "n": 2})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    // A new session after restart must not reuse an id.
    let other = create(&app2, small_config(3)).await;
    assert_ne!(other, id);
}

/// Four proposals and four observations, with a posterior snapshot per step.
async fn walkthrough(app: &Router) -> Vec<(StatusCode, Value)> {
    let mut log = Vec::new();
    let (st, h) = call(app, "POST", "/api/sessions", Some(small_config(4))).await;
    let id = h["id"].as_str().unwrap().to_string();
    log.push((st, h));
    for n_frac in [0.5, 0.3, 0.6, 0.4] {
        let (st, p) = call(app, "GET", &format!("/api/sessions/{id}/design"), None).await;
        let d = p["d"].as_u64().unwrap();
        log.push((st, p));
        let n = (d as f64 * n_frac).round() as u64;
        let (st, o) = call(
            app,
            "POST",
            &format!("/api/sessions/{id}/observations"),
            Some(json!({"d": d, "n": n})),
        )
        .await;
        log.push((st, o));
    }
    log.push(call(app, "GET", &format!("/api/sessions/{id}/history"), None).await);
    log
}

#[tokio::test]
async fn four_step_walkthrough_is_replayable() {
    let d1 = tempfile::tempdir().unwrap();
    let first = walkthrough(&app(d1.path(), None)).await;
    assert!(first.iter().all(|(st, _)| st.is_success()));
    let observed: Vec<&Value> = first
        .iter()
        .filter(|(_, v)| v.get("record").is_some())
        .map(|(_, v)| v)
        .collect();
    assert_eq!(observed.len(), 4);
    for o in &observed {
        assert_eq!(o["snapshots"].as_array().unwrap().len(), 4);
    }
    let history = &first.last().unwrap().1;
    assert_eq!(history["records"].as_array().unwrap().len(), 4);
    assert_eq!(history["handle"]["status"], "complete");

    let d2 = tempfile::tempdir().unwrap();
    let second = walkthrough(&app(d2.path(), None)).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn static_assets_are_served_outside_api() {
    let dir = tempfile::tempdir().unwrap();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>fr</html>").unwrap();
    let app = app(dir.path(), Some(web.path().to_path_buf()));
    let (st, v) = call(&app, "GET", "/", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v, Value::String("<html>fr</html>".into()));
    let (st, v) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (st, v) = call(&app, "GET", "/api/defaults", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["particles"], 1000);
    let (st, _) = call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
