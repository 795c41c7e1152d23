use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

use punner_cli::service::{answer, router, AppState, NerRequest, NerResponse};
use punner_harness::ner::save_model;
use punner_model::{ModelCheckpoint, OptimizerConfig, Trainer};

mod common;

use common::{model, TEXT};

async fn call(app: axum::Router, method: &str, uri: &str, body: Option<serde_json::Value>) -> (StatusCode, serde_json::Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

fn app() -> (Arc<AppState>, axum::Router) {
    let state = AppState::new(model().clone());
    (state.clone(), router(state, "*"))
}

#[tokio::test]
async fn health_and_entity_types() {
    let (_, app) = app();
    let (s, v) = call(app.clone(), "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, serde_json::json!({"status": "ok"}));
    let (s, v) = call(app, "GET", "/api/entity-types", None).await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 6);
    let company = list.iter().find(|e| e["id"] == "company").unwrap();
    assert_eq!(company["datasets"], serde_json::json!(["synth_news"]));
    assert!(company["group"].is_string() && company["granularity"].is_string());
}

#[tokio::test]
async fn on_demand_queries() {
    let (_, app) = app();
    let (s, v) = call(app.clone(), "POST", "/api/ner", Some(serde_json::json!({"text": TEXT, "entity_types": ["name"]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: NerResponse = serde_json::from_value(v).unwrap();
    assert_eq!(r.raw_target, "((name):(Tom))");
    assert_eq!(r.mentions.len(), 1);
    assert_eq!((r.mentions[0].type_id.as_str(), r.mentions[0].text.as_str(), r.mentions[0].start, r.mentions[0].end), ("name", "Tom", Some(0), Some(3)));
    assert!(r.parse_valid);

    let (s, v) = call(app.clone(), "POST", "/api/ner", Some(serde_json::json!({"text": TEXT, "entity_types": ["company"]}))).await;
    assert_eq!(s, StatusCode::OK);
    let r: NerResponse = serde_json::from_value(v).unwrap();
    assert!(r.mentions.is_empty());
    assert_eq!(r.null_types, vec!["company"]);

    let (s, v) = call(app, "POST", "/api/ner?strict=true", Some(serde_json::json!({"text": TEXT, "entity_types": ["time", "location"], "decode": {"mode": "beam", "width": 3}}))).await;
    assert_eq!(s, StatusCode::OK);
    let r: NerResponse = serde_json::from_value(v).unwrap();
    assert_eq!(r.raw_target, "((time):(tomorrow),(location):(zoo))");
    assert!(r.mentions.iter().all(|m| m.type_id == "time" || m.type_id == "location"));
}

#[tokio::test]
async fn bad_requests() {
    let (_, app) = app();
    for body in [
        serde_json::json!({"text": TEXT, "entity_types": []}),
        serde_json::json!({"text": "  ", "entity_types": ["name"]}),
        serde_json::json!({"text": TEXT, "entity_types": ["dragon"]}),
        serde_json::json!({"text": TEXT}),
        serde_json::json!({"text": "x".repeat(500), "entity_types": ["name"]}),
    ] {
        let (s, _) = call(app.clone(), "POST", "/api/ner", Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
}

#[tokio::test]
async fn unavailable_while_reloading() {
    let (state, app) = app();
    state.begin_reload();
    let (s, _) = call(app.clone(), "POST", "/api/ner", Some(serde_json::json!({"text": TEXT, "entity_types": ["name"]}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    state.finish_reload(Some(model().clone())).await;
    let (s, _) = call(app, "POST", "/api/ner", Some(serde_json::json!({"text": TEXT, "entity_types": ["name"]}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn reload_from_disk_and_cors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = model();
    let trainer = Trainer::from_model(m.model.clone(), m.vocab.clone(), OptimizerConfig::default(), 0).unwrap();
    save_model(&path, &ModelCheckpoint::from_trainer(&trainer, false), &m.codec).unwrap();
    let state = AppState::from_checkpoint(path).unwrap();
    state.reload().await.unwrap();
    let app = router(state, "*");
    let req = Request::builder().method("OPTIONS").uri("/api/ner").header("origin", "http://ui.local").header("access-control-request-method", "POST").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers().get("access-control-allow-origin").unwrap(), "*");
    let (s, v) = call(app, "POST", "/api/ner", Some(serde_json::json!({"text": TEXT, "entity_types": ["name"]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["raw_target"], "((name):(Tom))");
}

#[tokio::test]
async fn service_matches_predict_and_is_stable_under_concurrency() {
    let (_, app) = app();
    let req = NerRequest { text: TEXT.into(), entity_types: vec!["time".into(), "location".into()], decode: Default::default() };
    let direct = serde_json::to_value(answer(model(), &req, false).unwrap()).unwrap();
    let body = serde_json::to_value(&req).unwrap();
    let calls = (0..8).map(|_| call(app.clone(), "POST", "/api/ner", Some(body.clone())));
    for (s, v) in futures_join(calls).await {
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v, direct);
    }
}

async fn futures_join<F: std::future::Future + Send + 'static>(fs: impl Iterator<Item = F>) -> Vec<F::Output>
where
    F::Output: Send + 'static,
{
    let handles: Vec<_> = fs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}
