mod common;

use common::{run_contract, Schemas, TestApp};
use serde_json::json;

#[tokio::test]
async fn every_endpoint_matches_published_schemas() {
    let app = TestApp::new();
    let schemas = Schemas::load();
    let checks = run_contract(&app, &schemas).await;
    let failed: Vec<_> = checks.iter().filter(|c| !c.ok).collect();
    assert!(failed.is_empty(), "{failed:#?}");
    assert!(checks.len() > 30);
}

#[tokio::test]
async fn citations_carry_recall_increments() {
    let app = TestApp::new();
    let (_, user) = app.call("POST", "/users", Some(json!({}))).await;
    let uid = user["user_id"].as_str().unwrap();
    let (_, s) = app.call("POST", &format!("/users/{uid}/sessions"), None).await;
    let sid = s["session_id"].as_str().unwrap();
    app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": "we had a picnic at the lake"}))).await;
    app.call("POST", &format!("/sessions/{sid}/close"), None).await;

    let (_, s) = app.call("POST", &format!("/users/{uid}/sessions"), None).await;
    let sid = s["session_id"].as_str().unwrap();
    let (status, reply) = app
        .call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": "the lake picnic was lovely"})))
        .await;
    assert_eq!(status, 200);
    let ids = reply["cited_memory_ids"].as_array().unwrap();
    assert_eq!(ids.len(), 1);
    let (_, mems) = app.call("GET", &format!("/users/{uid}/memories"), None).await;
    let m = mems["memories"].as_array().unwrap().iter().find(|m| m["id"] == ids[0]).unwrap();
    assert_eq!(m["recall_count"], 1);
}

#[tokio::test]
async fn diary_pages_and_snapshot() {
    let app = TestApp::new();
    let (_, user) = app.call("POST", "/users", Some(json!({"user_id": "pager"}))).await;
    assert_eq!(user["user_id"], "pager");
    for i in 0..5 {
        let (_, s) = app.call("POST", "/users/pager/sessions", None).await;
        let sid = s["session_id"].as_str().unwrap();
        app.call("POST", &format!("/sessions/{sid}/messages"), Some(json!({"text": format!("walk number {i} in the park")}))).await;
        app.call("POST", &format!("/sessions/{sid}/close"), None).await;
    }
    let mut sizes = Vec::new();
    for page in 1..=3 {
        let (_, p) = app.call("GET", &format!("/users/pager/diaries?page={page}&page_size=2"), None).await;
        sizes.push(p["entries"].as_array().unwrap().len());
        assert_eq!(p["total"], 5);
    }
    assert_eq!(sizes, [2, 2, 1]);
}
