//! In-process service over the toy document with the offline provider.
#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mudoc_core::fixtures::toy_biology_document;
use mudoc_core::gateway::{MockProvider, MockScript};
use mudoc_core::generation::StreamEvent;
use mudoc_core::index::Index;
use mudoc_core::ingest::{ingest_documents, IngestConfig};
use mudoc_service::api::{router, AppState};
use mudoc_service::app_state;
use mudoc_service::config::{ProviderKind, ServiceConfig};
use mudoc_service::session::Clock;
use serde_json::Value;
use tower::ServiceExt;

pub const SEED: u64 = 5;
pub const DIM: usize = 16;

pub async fn toy_index(provider: &MockProvider) -> Arc<Index> {
    let cfg = IngestConfig { min_chunk_chars: 400, ..Default::default() };
    Arc::new(ingest_documents(vec![toy_biology_document()], provider, &cfg).await.unwrap())
}

pub fn offline_provider() -> Arc<MockProvider> {
    Arc::new(MockProvider::new(MockScript::offline(SEED, DIM)))
}

/// Manually advanced clock, in milliseconds.
#[derive(Clone, Default)]
pub struct TestClock(pub Arc<AtomicU64>);

impl TestClock {
    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn clock(&self) -> Clock {
        let t = self.0.clone();
        Arc::new(move || t.load(Ordering::SeqCst))
    }
}

pub struct TestApp {
    pub state: AppState,
    pub provider: Arc<MockProvider>,
    pub clock: TestClock,
}

impl TestApp {
    pub async fn new(data_dir: &Path) -> Self {
        let provider = offline_provider();
        let index = toy_index(&provider).await;
        Self::with(data_dir, provider, index, TestClock::default())
    }

    pub fn with(data_dir: &Path, provider: Arc<MockProvider>, index: Arc<Index>, clock: TestClock) -> Self {
        let cfg = ServiceConfig {
            provider: ProviderKind::Mock,
            data_dir: data_dir.to_path_buf(),
            ..Default::default()
        };
        let state = app_state(cfg, index, provider.clone(), clock.clock()).unwrap();
        Self { state, provider, clock }
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    pub async fn send(&self, method: Method, uri: &str, body: Option<Value>) -> axum::response::Response {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        self.router().oneshot(req.body(body).unwrap()).await.unwrap()
    }

    pub async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let resp = self.send(method, uri, body).await;
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
        (status, v)
    }

    pub async fn create(&self, condition: &str) -> String {
        let (status, v) = self.json(Method::POST, "/sessions", Some(serde_json::json!({ "condition": condition }))).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    /// Posts a chat message and reads the whole event stream.
    pub async fn chat(&self, id: &str, message: &str) -> (StatusCode, Vec<(String, StreamEvent)>) {
        let resp = self
            .send(Method::POST, &format!("/sessions/{id}/chat"), Some(serde_json::json!({ "message": message })))
            .await;
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        if status != StatusCode::OK {
            return (status, Vec::new());
        }
        (status, parse_sse(std::str::from_utf8(&bytes).unwrap()))
    }

    /// Waits until no turn is running for the session.
    pub async fn settle(&self, id: &str) {
        for _ in 0..500 {
            let (_, v) = self.json(Method::GET, &format!("/sessions/{id}"), None).await;
            if v["busy"] == Value::Bool(false) {
                return;
            }
            tokio::time::sleep(std::time::Duration::from_millis(2)).await;
        }
        panic!("session {id} stayed busy");
    }
}

/// Splits an SSE body into `(event name, payload)` pairs, skipping comments.
pub fn parse_sse(body: &str) -> Vec<(String, StreamEvent)> {
    let mut out = Vec::new();
    for frame in body.split("\n\n") {
        let mut name = None;
        let mut data = String::new();
        for line in frame.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                name = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("data:") {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if let Some(name) = name {
            out.push((name, serde_json::from_str(&data).unwrap_or_else(|e| panic!("bad payload {data}: {e}"))));
        }
    }
    out
}
