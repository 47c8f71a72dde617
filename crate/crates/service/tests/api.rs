use std::io::{Read, Write};
use std::net::TcpStream;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sumloop::annotation::TaskStore;
use sumloop::corpus::{Sample, Speaker, Turn};
use sumloop_service::{router, AppState};
use tower::ServiceExt;

fn sample(id: &str) -> Sample {
    Sample {
        id: id.into(),
        turns: vec![
            Turn {
                speaker: Speaker::Doctor,
                text: "¿Qué le pasa?".into(),
            },
            Turn {
                speaker: Speaker::Patient,
                text: format!("Tengo fiebre ({id})"),
            },
        ],
        gold_summary: None,
    }
}

/// Runs root with run `r1` holding three pending tasks for iteration 1.
fn setup() -> (tempfile::TempDir, TaskStore) {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("r1");
    std::fs::create_dir_all(&dir).unwrap();
    let store = TaskStore::open(&dir, "r1");
    let samples: Vec<Sample> = ["a", "b", "c"].iter().map(|id| sample(id)).collect();
    store.enqueue(&samples.iter().collect::<Vec<_>>(), 1).unwrap();
    (root, store)
}

fn app(root: &tempfile::TempDir, default_run: Option<&str>) -> Router {
    router(AppState::new(root.path(), default_run.map(String::from)), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn queue_lists_pending_tasks() {
    let (root, _) = setup();
    let app = app(&root, None);
    let (s, v) = call(&app, "GET", "/api/queue?run_id=r1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["iteration"], 1);
    assert_eq!(v["pending_count"], 3);
    let ids: Vec<&str> = v["tasks"].as_array().unwrap().iter().map(|t| t["sample_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
}

#[tokio::test]
async fn task_view_has_the_conversation() {
    let (root, store) = setup();
    let id = store.tasks().unwrap()[1].task_id.clone();
    let (s, v) = call(&app(&root, Some("r1")), "GET", &format!("/api/task/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["sample_id"], "b");
    assert_eq!(v["status"], "pending");
    assert_eq!(v["turns"][0], json!({"speaker": "doctor", "text": "¿Qué le pasa?"}));
    assert_eq!(v["turns"][1]["text"], "Tengo fiebre (b)");
}

#[tokio::test]
async fn submit_flow_until_resumable() {
    let (root, store) = setup();
    let app = app(&root, None);
    let ids: Vec<String> = store.tasks().unwrap().into_iter().map(|t| t.task_id).collect();
    let text = "  Fièvre depuis hier ✓\nPas de toux. ";
    for (k, id) in ids.iter().enumerate() {
        let (s, st) = call(&app, "GET", "/api/status?run_id=r1", None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(st, json!({"iteration": 1, "pending_count": 3 - k, "resumable": false}));
        let body = json!({ "summary": text }).to_string();
        let (s, v) = call(&app, "POST", &format!("/api/task/{id}/submit?run_id=r1"), Some(&body)).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["status"], "submitted");
        assert_eq!(v["submitted_summary"], text);
    }
    let (_, st) = call(&app, "GET", "/api/status?run_id=r1", None).await;
    assert_eq!(st, json!({"iteration": 1, "pending_count": 0, "resumable": true}));
    let (_, q) = call(&app, "GET", "/api/queue?run_id=r1", None).await;
    assert_eq!(q["pending_count"], 0);

    // stored byte for byte
    let records = store
        .fulfilled_records(&["a".into(), "b".into(), "c".into()], 1)
        .unwrap()
        .unwrap();
    assert!(records.iter().all(|r| r.summary == text));
}

#[tokio::test]
async fn second_submission_conflicts_and_first_wins() {
    let (root, store) = setup();
    let app = app(&root, Some("r1"));
    let id = store.tasks().unwrap()[0].task_id.clone();
    let uri = format!("/api/task/{id}/submit");
    let (s, _) = call(&app, "POST", &uri, Some(r#"{"summary":"first"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call(&app, "POST", &uri, Some(r#"{"summary":"second"}"#)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("already labeled"));
    assert_eq!(v["task"]["submitted_summary"], "first");
    assert_eq!(store.get(&id).unwrap().submitted_summary.as_deref(), Some("first"));
}

#[tokio::test]
async fn concurrent_submissions_have_one_winner() {
    let (root, store) = setup();
    let app = app(&root, Some("r1"));
    let id = store.tasks().unwrap()[2].task_id.clone();
    let uri = format!("/api/task/{id}/submit");
    let handles: Vec<_> = (0..16)
        .map(|k| {
            let app = app.clone();
            let uri = uri.clone();
            tokio::spawn(async move { call(&app, "POST", &uri, Some(&json!({"summary": format!("s{k}")}).to_string())).await })
        })
        .collect();
    let mut ok = Vec::new();
    for h in handles {
        let (s, v) = h.await.unwrap();
        match s {
            StatusCode::OK => ok.push(v["submitted_summary"].as_str().unwrap().to_string()),
            StatusCode::CONFLICT => {}
            other => panic!("unexpected {other}"),
        }
    }
    assert_eq!(ok.len(), 1);
    assert_eq!(store.get(&id).unwrap().submitted_summary.unwrap(), ok[0]);
}

#[tokio::test]
async fn bad_requests() {
    let (root, store) = setup();
    let app = app(&root, None);
    let id = store.tasks().unwrap()[0].task_id.clone();
    let submit = format!("/api/task/{id}/submit?run_id=r1");

    for body in [r#"{"summary":"   "}"#, r#"{"summary":""}"#, r#"{"text":"x"}"#, "not json"] {
        let (s, v) = call(&app, "POST", &submit, Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
    assert_eq!(store.pending().unwrap().len(), 3);

    let cases = [
        ("GET", "/api/queue", StatusCode::BAD_REQUEST),
        ("GET", "/api/queue?run_id=..%2Fetc", StatusCode::BAD_REQUEST),
        ("GET", "/api/status?run_id=nope", StatusCode::NOT_FOUND),
        ("GET", "/api/task/i9-0000?run_id=r1", StatusCode::NOT_FOUND),
    ];
    for (m, uri, want) in cases {
        let (s, v) = call(&app, m, uri, None).await;
        assert_eq!(s, want, "{uri}");
        assert!(v["error"].is_string(), "{uri}");
    }
    let (s, _) = call(&app, "POST", "/api/task/i9-0000/submit?run_id=r1", Some(r#"{"summary":"x"}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_run_reports_nothing_to_do() {
    let root = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(root.path().join("fresh")).unwrap();
    let (s, v) = call(&app(&root, None), "GET", "/api/status?run_id=fresh", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"iteration": 0, "pending_count": 0, "resumable": false}));
}

#[tokio::test]
async fn static_files_are_served_beside_the_api() {
    let (root, _) = setup();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<h1>queue</h1>").unwrap();
    let app = router(AppState::new(root.path(), None), Some(web.path()));
    let resp = app
        .clone()
        .oneshot(Request::get("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (s, _) = call(&app, "GET", "/api/queue?run_id=r1", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn real_socket() {
    let (root, _) = setup();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = app(&root, None);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let raw = tokio::task::spawn_blocking(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        write!(s, "GET /api/status?run_id=r1 HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    })
    .await
    .unwrap();
    assert!(raw.starts_with("HTTP/1.1 200"), "{raw}");
    let body = raw.split("\r\n\r\n").nth(1).unwrap();
    let v: Value = serde_json::from_str(body).unwrap();
    assert_eq!(v["pending_count"], 3);
}
