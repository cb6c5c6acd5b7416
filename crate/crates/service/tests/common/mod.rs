#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use visguardian::synthetic::{SyntheticConfig, SyntheticStream};
use visguardian::{Mode, PolicyStore, Taxonomy};
use visguardian_service::{ServeOptions, Service};

pub const LABELS: [&str; 5] = ["person", "underwear", "swimsuit", "book", "doorknob"];

pub fn stream(width: u32, height: u32, frames: u64) -> (Arc<Taxonomy>, SyntheticStream) {
    let taxonomy = Arc::new(Taxonomy::bundled());
    let mut config = SyntheticConfig::new(&taxonomy, width, height, LABELS.len(), frames);
    config.labels = LABELS.map(String::from).to_vec();
    config.max_speed = 1;
    let stream = SyntheticStream::generate(&taxonomy, &config);
    (taxonomy, stream)
}

pub fn start(mode: Mode, options: ServeOptions) -> Service {
    let (taxonomy, stream) = stream(96, 64, 20);
    let frames = (0..stream.frame_count()).map(|i| (i, stream.frame(i))).collect();
    let store = PolicyStore::new("default", taxonomy, mode);
    Service::start(store, Box::new(stream.detector()), frames, options)
}

pub async fn call(router: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}
