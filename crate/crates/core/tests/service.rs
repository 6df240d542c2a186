//! HTTP contract of the session service, driven through the router with
//! scripted models.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use empathia::corpus::{EmotionLabel, Utterance};
use empathia::dialogue::scripted::{RecordingGenerator, ScriptedRecognizer};
use empathia::dialogue::{DialogueEngine, ResponseGenerator, TemplateBank, TemplatePolicy};
use empathia::evalkit::nsv;
use empathia::generator::DecodeConfig;
use empathia::service::{router, ServiceConfig, ServiceState};

fn engine_with(generator: Arc<dyn ResponseGenerator>) -> DialogueEngine {
    DialogueEngine::new(
        Arc::new(ScriptedRecognizer::default()),
        generator,
        Arc::new(TemplateBank::default_bank()),
        TemplatePolicy::Uniform,
        DecodeConfig::greedy(),
    )
}

fn build_app(cfg: ServiceConfig) -> Router {
    router(ServiceState::new(Some(engine_with(Arc::new(RecordingGenerator::default()))), cfg).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn new_session(app: &Router) -> String {
    let (st, v) = call(app, "POST", "/api/session", None).await;
    assert_eq!(st, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, id: &str, text: &str) -> Value {
    let (st, v) = call(app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "text": text }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    v
}

#[tokio::test]
async fn session_roundtrip() {
    let app = build_app(ServiceConfig::default());
    let a = new_session(&app).await;
    let b = new_session(&app).await;
    assert_ne!(a, b);
    let (_, t) = call(&app, "GET", &format!("/api/session/{a}/transcript"), None).await;
    assert_eq!(t["entries"], json!([]));
    assert_eq!(t["phase"], "Fresh");

    let r = say(&app, &a, "I'm upset.").await;
    assert_eq!(r["meta"]["phase"], "Probing");
    assert!(r["meta"]["strategy"].is_string());
    assert_eq!(r["message_id"], 2);
    let r = say(&app, &a, "We broke up.").await;
    assert_eq!(r["meta"]["cause"], "broke up");
    assert_eq!(r["meta"]["phase"], "Responding");

    let (_, t) = call(&app, "GET", &format!("/api/session/{a}/transcript"), None).await;
    let entries = t["entries"].as_array().unwrap();
    let ids: Vec<u64> = entries.iter().map(|e| e["message_id"].as_u64().unwrap()).collect();
    assert_eq!(ids, [1, 2, 3, 4]);
    assert_eq!(entries[0]["author"], "user");
    assert!(entries[0]["meta"].is_null());
    assert_eq!(entries[1]["author"], "bot");
    assert_eq!(entries[3]["meta"]["cause"], "broke up");
}

#[tokio::test]
async fn error_statuses() {
    let app = build_app(ServiceConfig::default());
    let (st, _) = call(&app, "POST", "/api/session/nope/message", Some(json!({"text": "hi"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/api/session/nope/transcript", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let id = new_session(&app).await;
    let (st, v) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({"text": "  "}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
    let (st, _) = call(&app, "POST", &format!("/api/session/{id}/feedback"), Some(json!({"message_id": 9, "vote": "up"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let no_models = router(ServiceState::new(None, ServiceConfig::default()).unwrap());
    let (st, _) = call(&no_models, "POST", "/api/session", None).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn feedback_rules_and_nsv() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("votes.jsonl");
    let cfg = ServiceConfig { ledger_path: Some(ledger.clone()), ..ServiceConfig::default() };
    let app = build_app(cfg.clone());

    let (_, v) = call(&app, "GET", "/api/metrics/nsv", None).await;
    assert_eq!(v, json!({"nsv": null, "upvotes": 0, "downvotes": 0, "no_votes": true}));

    let id = new_session(&app).await;
    for _ in 0..3 {
        say(&app, &id, "hello").await;
    }
    let fb = |m: u64, vote: &str| json!({"message_id": m, "vote": vote});
    let url = format!("/api/session/{id}/feedback");
    let (st, _) = call(&app, "POST", &url, Some(fb(1, "up"))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "user messages cannot be voted on");

    let (st, a) = call(&app, "POST", &url, Some(fb(2, "up"))).await;
    assert_eq!((st, a["changed"].clone()), (StatusCode::OK, json!(true)));
    let (_, a) = call(&app, "POST", &url, Some(fb(2, "up"))).await;
    assert_eq!(a["changed"], false);
    call(&app, "POST", &url, Some(fb(2, "down"))).await;
    call(&app, "POST", &url, Some(fb(4, "up"))).await;
    call(&app, "POST", &url, Some(fb(6, "up"))).await;

    let (_, v) = call(&app, "GET", "/api/metrics/nsv", None).await;
    assert_eq!((v["upvotes"].as_u64(), v["downvotes"].as_u64()), (Some(2), Some(1)));
    assert_eq!(v["nsv"].as_f64().unwrap(), nsv(2, 1).unwrap());

    let (_, t) = call(&app, "GET", &format!("/api/session/{id}/transcript"), None).await;
    assert_eq!(t["entries"][1]["vote"], "down");
    assert!(t["entries"][0]["vote"].is_null());

    // audit trail keeps the overwritten vote; a restart replays the same NSV
    let lines = std::fs::read_to_string(&ledger).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let restarted = build_app(cfg);
    let (_, v2) = call(&restarted, "GET", "/api/metrics/nsv", None).await;
    assert_eq!(v, v2);
}

struct SlowGenerator(RecordingGenerator);

impl ResponseGenerator for SlowGenerator {
    fn respond(
        &self,
        history: &[Utterance],
        query: &str,
        label: EmotionLabel,
        cause: Option<&str>,
        decode: &DecodeConfig,
        rng: &mut ChaCha8Rng,
    ) -> empathia::Result<String> {
        std::thread::sleep(Duration::from_millis(150));
        self.0.respond(history, query, label, cause, decode, rng)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_posts_are_serialized() {
    let state = ServiceState::new(Some(engine_with(Arc::new(SlowGenerator(RecordingGenerator::default())))), ServiceConfig::default()).unwrap();
    let app = router(state);
    let id = new_session(&app).await;
    let (a, b) = tokio::join!(say(&app, &id, "hello there"), say(&app, &id, "what time is it"));
    let mut ids = [a["message_id"].as_u64().unwrap(), b["message_id"].as_u64().unwrap()];
    ids.sort();
    assert_eq!(ids, [2, 4]);
    let (_, t) = call(&app, "GET", &format!("/api/session/{id}/transcript"), None).await;
    let entries = t["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    for (i, e) in entries.iter().enumerate() {
        assert_eq!(e["message_id"], i as u64 + 1);
        assert_eq!(e["author"], if i % 2 == 0 { "user" } else { "bot" });
    }
}

#[tokio::test]
async fn sessions_survive_restart_only_when_persisted() {
    let dir = tempfile::tempdir().unwrap();
    let persisted = ServiceConfig { sessions_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() };
    let first = build_app(persisted.clone());
    let id = new_session(&first).await;
    say(&first, &id, "I'm upset.").await;
    let second = build_app(persisted);
    let (st, t) = call(&second, "GET", &format!("/api/session/{id}/transcript"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(t["entries"].as_array().unwrap().len(), 2);
    assert_eq!(t["phase"], "Probing");

    let volatile = build_app(ServiceConfig::default());
    let id = new_session(&volatile).await;
    let fresh = build_app(ServiceConfig::default());
    let (st, _) = call(&fresh, "GET", &format!("/api/session/{id}/transcript"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let app = build_app(ServiceConfig { idle_timeout: Duration::from_millis(50), ..ServiceConfig::default() });
    let id = new_session(&app).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (st, _) = call(&app, "GET", &format!("/api/session/{id}/transcript"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
