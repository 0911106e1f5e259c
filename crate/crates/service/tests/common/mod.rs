#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use stylegallery_core::ImageRecord;
use stylegallery_service::{router, AppState, JobState, ProgressEvent, ServiceConfig, TransferJob};
use tower::ServiceExt;

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub state: Arc<AppState>,
    pub app: Router,
}

impl Harness {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (state, app) = open(dir.path());
        Self { dir, state, app }
    }

    /// Drops in-memory state and reopens the same data directory.
    pub fn restart(self) -> Self {
        let (state, app) = open(self.dir.path());
        Self { state, app, ..self }
    }

    pub async fn raw(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let body = match body {
            Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
            None => Body::empty(),
        };
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body)
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, bytes.to_vec())
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.raw(method, uri, body).await;
        let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, v)
    }

    pub async fn ok(&self, method: Method, uri: &str, body: Option<Value>) -> TransferJob {
        let (status, v) = self.call(method, uri, body).await;
        assert!(status.is_success(), "{uri}: {status} {v}");
        serde_json::from_value(v).unwrap()
    }

    pub async fn create(&self, content: &ImageRecord, styles: &[ImageRecord], config: Value) -> TransferJob {
        let (status, v) = self.call(Method::POST, "/jobs", Some(create_body(content, styles, config))).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        serde_json::from_value(v).unwrap()
    }

    /// Create, mask and preview.
    pub async fn matched(&self, content: &ImageRecord, styles: &[ImageRecord], config: Value) -> TransferJob {
        let job = self.create(content, styles, config).await;
        self.ok(Method::POST, &format!("/jobs/{}/masks", job.id), None).await;
        self.ok(Method::POST, &format!("/jobs/{}/matches/preview", job.id), None).await
    }

    pub async fn wait_finished(&self, id: &str) -> TransferJob {
        let start = Instant::now();
        loop {
            let job = self.state.get_job(id).unwrap();
            if matches!(job.state, JobState::Done | JobState::Failed) {
                return job;
            }
            assert!(start.elapsed() < Duration::from_secs(300), "job {id} did not finish");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Reads the event stream to its end.
    pub async fn events(&self, id: &str) -> Vec<ProgressEvent> {
        let (status, body) = self.raw(Method::GET, &format!("/jobs/{id}/events"), None).await;
        assert_eq!(status, StatusCode::OK);
        parse_sse(&String::from_utf8(body).unwrap())
    }
}

fn open(dir: &std::path::Path) -> (Arc<AppState>, Router) {
    let state = AppState::open(ServiceConfig {
        data_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    })
    .unwrap();
    let app = router(state.clone());
    (state, app)
}

pub fn parse_sse(text: &str) -> Vec<ProgressEvent> {
    text.lines()
        .filter_map(|l| l.strip_prefix("data:"))
        .map(|d| serde_json::from_str(d.trim()).unwrap())
        .collect()
}

pub fn b64_png(img: &ImageRecord) -> String {
    base64::engine::general_purpose::STANDARD.encode(img.encode_png().unwrap())
}

pub fn create_body(content: &ImageRecord, styles: &[ImageRecord], config: Value) -> Value {
    json!({
        "content": { "id": content.id, "png_base64": b64_png(content) },
        "styles": styles.iter().map(|s| json!({ "id": s.id, "png_base64": b64_png(s) })).collect::<Vec<_>>(),
        "config": config,
    })
}
