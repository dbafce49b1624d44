#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use journal_core::analyzer::EmotionLexicon;
use journal_core::engine::{Backends, Engine, EngineConfig};
use journal_core::memory::Timestamp;
use journal_core::store::Store;
use journal_core::templater::Templates;
use journal_service::api::{router, AppState, ManualClock};
use serde_json::Value;
use tower::ServiceExt;

pub fn fixture_lexicon() -> EmotionLexicon {
    EmotionLexicon::from_entries([
        ("upset", "frustration", 0.7),
        ("sad", "sadness", 0.6),
        ("happy", "joy", 0.7),
        ("ruined", "frustration", 0.6),
        ("scared", "fear", 0.8),
        ("proud", "pride", 0.8),
    ])
    .unwrap()
}

pub fn mock_engine(dir: &Path, seed: u64) -> Engine {
    Engine::new(
        Arc::new(Store::open(dir).unwrap()),
        EngineConfig::default(),
        Backends::mock(fixture_lexicon()),
        Templates::builtin(),
        seed,
    )
    .unwrap()
}

pub struct TestApp {
    pub router: Router,
    pub clock: Arc<ManualClock>,
    pub engine: Arc<Engine>,
    _dir: tempfile::TempDir,
}

impl TestApp {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let engine = Arc::new(mock_engine(dir.path(), 11));
        let clock = Arc::new(ManualClock::new(Timestamp::from_days(20_000.0)));
        let router = router(AppState {
            engine: engine.clone(),
            clock: clock.clone(),
        });
        Self {
            router,
            clock,
            engine,
            _dir: dir,
        }
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let body = match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        };
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body)
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes)
            .unwrap_or_else(|e| panic!("{method} {uri}: body is not JSON ({e}): {:?}", String::from_utf8_lossy(&bytes)));
        (status, value)
    }
}

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

pub struct Schemas {
    validators: std::collections::HashMap<String, jsonschema::Validator>,
}

impl Schemas {
    pub fn load() -> Self {
        let mut validators = std::collections::HashMap::new();
        for entry in std::fs::read_dir(schema_dir()).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_stem().unwrap().to_string_lossy().into_owned();
            let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            validators.insert(name, jsonschema::validator_for(&doc).unwrap());
        }
        Self { validators }
    }

    /// Validation errors of `value` against schema `name`, joined; empty when valid.
    pub fn errors(&self, name: &str, value: &Value) -> String {
        let v = self.validators.get(name).unwrap_or_else(|| panic!("no schema `{name}`"));
        v.iter_errors(value)
            .map(|e| format!("{}: {e}", e.instance_path))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// The car-splash conversation used across end-to-end checks: user turns and
/// their minute offsets.
pub const CAR_SPLASH: [(&str, i64); 3] = [
    ("On my way to school a car drove through a puddle and splashed dirty water all over me.", 0),
    ("The water ruined my favorite outfit. I was so upset.", 2),
    ("I felt sad all day and had to do laundry at home to save the outfit.", 5),
];

impl TestApp {
    pub async fn call_raw(&self, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }
}

#[derive(Debug)]
pub struct ContractCheck {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

fn check(
    out: &mut Vec<ContractCheck>,
    schemas: &Schemas,
    name: &str,
    (status, body): &(StatusCode, Value),
    want_status: u16,
    schema: &str,
) {
    let mut problems = Vec::new();
    if status.as_u16() != want_status {
        problems.push(format!("status {} != {want_status}", status.as_u16()));
    }
    let errs = schemas.errors(schema, body);
    if !errs.is_empty() {
        problems.push(format!("schema `{schema}`: {errs}"));
    }
    out.push(ContractCheck {
        name: name.to_string(),
        ok: problems.is_empty(),
        detail: if problems.is_empty() { format!("{want_status} {schema}") } else { problems.join(", ") },
    });
}

/// Drives every endpoint through success and error paths, checking status
/// codes and bodies against the published schemas.
pub async fn run_contract(app: &TestApp, schemas: &Schemas) -> Vec<ContractCheck> {
    use serde_json::json;
    let mut out = Vec::new();
    let c = &mut out;

    check(c, schemas, "GET /health", &app.call("GET", "/health", None).await, 200, "health");

    let created = app.call("POST", "/users", Some(json!({}))).await;
    check(c, schemas, "POST /users", &created, 201, "user");
    let uid = created.1["user_id"].as_str().unwrap_or("missing").to_string();
    let bad = app.call("POST", "/users", Some(json!({"traits": ["detailed", "direct"]}))).await;
    check(c, schemas, "POST /users (conflicting traits)", &bad, 400, "error");
    if bad.1["field"] != "traits" {
        c.push(ContractCheck { name: "error names field".into(), ok: false, detail: bad.1.to_string() });
    }
    check(c, schemas, "POST /users (malformed JSON)", &app.call_raw("POST", "/users", "{").await, 400, "error");

    check(c, schemas, "GET preferences", &app.call("GET", &format!("/users/{uid}/preferences"), None).await, 200, "preferences");
    check(c, schemas, "GET preferences (unknown user)", &app.call("GET", "/users/nobody/preferences", None).await, 404, "error");
    let put = app
        .call(
            "PUT",
            &format!("/users/{uid}/preferences"),
            Some(json!({"age_band": "teen", "appearance": {"hair_color": "yellow", "fashion_style": "casual"}})),
        )
        .await;
    check(c, schemas, "PUT preferences", &put, 200, "preferences");
    let put_bad = app
        .call("PUT", &format!("/users/{uid}/preferences"), Some(json!({"appearance": {"hair_color": "plaid"}})))
        .await;
    check(c, schemas, "PUT preferences (not in catalog)", &put_bad, 400, "error");
    check(c, schemas, "PUT preferences (unknown user)", &app.call("PUT", "/users/nobody/preferences", Some(json!({}))).await, 404, "error");

    let session = app.call("POST", &format!("/users/{uid}/sessions"), None).await;
    check(c, schemas, "POST sessions", &session, 201, "session");
    let sid = session.1["session_id"].as_str().unwrap_or("missing").to_string();
    check(c, schemas, "POST sessions (unknown user)", &app.call("POST", "/users/nobody/sessions", None).await, 404, "error");

    for (i, (text, minute)) in CAR_SPLASH.iter().enumerate() {
        app.clock.set(Timestamp::from_days(20_000.0).plus_minutes(*minute));
        let r = app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": text}))).await;
        check(c, schemas, &format!("POST messages #{i}"), &r, 200, "message_response");
    }
    check(c, schemas, "POST messages (empty text)", &app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": " "}))).await, 400, "error");
    check(c, schemas, "POST messages (missing text)", &app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({}))).await, 400, "error");
    check(c, schemas, "POST messages (unknown session)", &app.call("POST", "/sessions/nope/messages", Some(json!({"text": "hi"}))).await, 404, "error");

    let closed = app.call("POST", &format!("/sessions/{sid}/close"), None).await;
    check(c, schemas, "POST close", &closed, 200, "close_response");
    check(c, schemas, "POST messages (closed session)", &app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": "hello again"}))).await, 409, "error");
    check(c, schemas, "POST close (twice)", &app.call("POST", &format!("/sessions/{sid}/close"), None).await, 409, "error");
    let empty = app.call("POST", &format!("/users/{uid}/sessions"), None).await;
    let empty_sid = empty.1["session_id"].as_str().unwrap_or("missing").to_string();
    check(c, schemas, "POST close (no user turns)", &app.call("POST", &format!("/sessions/{empty_sid}/close"), None).await, 409, "error");
    check(c, schemas, "POST close (unknown session)", &app.call("POST", "/sessions/nope/close", None).await, 404, "error");

    check(c, schemas, "GET diaries", &app.call("GET", &format!("/users/{uid}/diaries?page=1&page_size=2"), None).await, 200, "diary_page");
    check(c, schemas, "GET diaries (page_size=0)", &app.call("GET", &format!("/users/{uid}/diaries?page_size=0"), None).await, 400, "error");
    check(c, schemas, "GET diaries (bad page)", &app.call("GET", &format!("/users/{uid}/diaries?page=x"), None).await, 400, "error");
    check(c, schemas, "GET diaries (unknown user)", &app.call("GET", "/users/nobody/diaries", None).await, 404, "error");

    app.clock.set(Timestamp::from_days(20_008.0));
    check(c, schemas, "GET memories", &app.call("GET", &format!("/users/{uid}/memories"), None).await, 200, "memories");
    check(c, schemas, "GET memories (filtered)", &app.call("GET", &format!("/users/{uid}/memories?term=long_term&min_strength=0.01"), None).await, 200, "memories");
    check(c, schemas, "GET memories (bad term)", &app.call("GET", &format!("/users/{uid}/memories?term=forever"), None).await, 400, "error");
    check(c, schemas, "GET memories (bad min_strength)", &app.call("GET", &format!("/users/{uid}/memories?min_strength=2"), None).await, 400, "error");
    check(c, schemas, "GET memories (unknown user)", &app.call("GET", "/users/nobody/memories", None).await, 404, "error");

    let s2 = app.call("POST", &format!("/users/{uid}/sessions"), None).await;
    let s2 = s2.1["session_id"].as_str().unwrap_or("missing").to_string();
    let cited = app
        .call("POST", &format!("/sessions/{s2}/messages"), Some(json!({"text": "a car splashed my outfit again"})))
        .await;
    check(c, schemas, "POST messages (with citation)", &cited, 200, "message_response");
    if cited.1["cited_memory_ids"].as_array().is_none_or(|a| a.is_empty()) {
        c.push(ContractCheck { name: "citation present".into(), ok: false, detail: cited.1.to_string() });
    }

    check(c, schemas, "unknown route", &app.call("GET", "/nope", None).await, 404, "error");
    check(c, schemas, "wrong method", &app.call("DELETE", "/health", None).await, 405, "error");
    out
}
