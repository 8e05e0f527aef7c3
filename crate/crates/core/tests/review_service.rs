use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use drivelab_core::expert::{review_router, ReviewState};
use drivelab_core::harness::{run_episode, EpisodeStore, PolicyKind, RunConfig, RunContext};
use drivelab_core::llm::ScriptedBackend;
use drivelab_core::memory::MemoryBank;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const REFLECTION: &str = "CAUSE: slowed down with a clear road\nSCENARIO: open lane with no vehicle close ahead\nPROPER_DECISION: keep speed";

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<ReviewState>,
}

fn fixture(reflection: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let store = EpisodeStore::new(dir.path());
    let mut cfg = RunConfig::default();
    cfg.policy = PolicyKind::Llm;
    cfg.horizon_steps = 30;
    let rec = run_episode(&cfg, 21, &RunContext::default(), None).unwrap();
    store.save(&rec).unwrap();
    let state = Arc::new(ReviewState {
        store,
        bank: Arc::new(MemoryBank::local()),
        backend: Arc::new(ScriptedBackend::constant(reflection)),
    });
    Fixture { _dir: dir, state }
}

async fn call(
    state: &Arc<ReviewState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = review_router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, value)
}

#[tokio::test]
async fn lists_and_fetches_episodes() {
    let f = fixture(REFLECTION);
    let (status, list) = call(&f.state, "GET", "/api/episodes", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        list,
        json!([{"id": "ep-llm-21", "seed": 21, "outcome": "pass", "steps": 30}])
    );
    let (status, ep) = call(&f.state, "GET", "/api/episodes/ep-llm-21", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ep["steps"].as_array().unwrap().len(), 30);
    assert_eq!(ep["header"]["schema_version"], 1);
    let vehicles = ep["steps"][10]["world"]["vehicles"]
        .as_array()
        .unwrap()
        .len();
    assert!(vehicles >= 1);
    let (status, _) = call(&f.state, "GET", "/api/episodes/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn feedback_creates_then_returns_the_same_entry() {
    let f = fixture(REFLECTION);
    let body = json!({"expert_action": "FASTER", "advice_text": "keep up with traffic", "author": "human"});
    let uri = "/api/episodes/ep-llm-21/steps/4/feedback";
    let (s1, e1) = call(&f.state, "POST", uri, Some(body.clone())).await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!(e1["id"], "mem-00001");
    assert_eq!(
        e1["scenario_summary"],
        "open lane with no vehicle close ahead"
    );
    let (s2, e2) = call(&f.state, "POST", uri, Some(body)).await;
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(e1, e2);
    let (_, mem) = call(&f.state, "GET", "/api/memory", None).await;
    assert_eq!(mem.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn feedback_errors_map_to_status_codes() {
    let f = fixture(REFLECTION);
    let ok_body = json!({"advice_text": "x", "author": "oracle"});
    let (s, _) = call(
        &f.state,
        "POST",
        "/api/episodes/ep-llm-21/steps/30/feedback",
        Some(ok_body.clone()),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &f.state,
        "POST",
        "/api/episodes/missing/steps/0/feedback",
        Some(ok_body),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(
        &f.state,
        "POST",
        "/api/episodes/ep-llm-21/steps/0/feedback",
        Some(json!({"advice_text": " ", "author": "human"})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let bad = fixture("I am not sure what went wrong.");
    let (s, v) = call(
        &bad.state,
        "POST",
        "/api/episodes/ep-llm-21/steps/0/feedback",
        Some(json!({"advice_text": "go", "author": "human"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_GATEWAY);
    assert_eq!(v["raw_output"], "I am not sure what went wrong.");
    assert!(bad.state.bank.is_empty());
}
