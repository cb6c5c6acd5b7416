//! Serves a synthetic stream over HTTP/WebSocket, reveals one group halfway
//! through, and prints the policy and stream metrics on exit.
//!
//! ```text
//! cargo run -p visguardian-service --example live_service -- 8080 10
//! websocat ws://127.0.0.1:8080/stream
//! ```

use std::env;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use tower::ServiceExt;
use visguardian::synthetic::{SyntheticConfig, SyntheticStream};
use visguardian::{Mode, PolicyStore, Taxonomy, VisibilityState};
use visguardian_service::{ServeOptions, Service};

#[tokio::main]
async fn main() {
    let args: Vec<u64> = env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let port = args.first().copied().unwrap_or(0) as u16;
    let seconds = args.get(1).copied().unwrap_or(4);

    let taxonomy = Arc::new(Taxonomy::bundled());
    let stream = SyntheticStream::generate(&taxonomy, &SyntheticConfig::new(&taxonomy, 320, 240, 8, 100));
    let frames = (0..stream.frame_count()).map(|i| (i, stream.frame(i))).collect();
    let store = PolicyStore::new("default", taxonomy, Mode::VisGuardian);
    let service = Service::start(store, Box::new(stream.detector()), frames, ServeOptions::default());
    let router = service.router();

    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await.expect("bind");
    println!("listening on http://{}", listener.local_addr().unwrap());
    let server = {
        let app = router.clone();
        tokio::spawn(async move { axum::serve(listener, app).await })
    };

    tokio::time::sleep(Duration::from_secs(seconds / 2)).await;
    let body = r#"{"kind":"ApplyGroup","anchor":"book","dimension":"Spatial","action":"Reveal"}"#;
    let request = Request::post("/interactions")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let response = router.oneshot(request).await.unwrap();
    println!("reveal Office group -> {}", response.status());
    tokio::time::sleep(Duration::from_secs(seconds - seconds / 2)).await;

    let policy = service.policy();
    let revealed: Vec<&String> = policy.states.iter().filter(|(_, s)| **s == VisibilityState::Revealed).map(|(c, _)| c).collect();
    println!("digest   {}", policy.digest);
    println!("revealed {revealed:?}");
    println!("{}", serde_json::to_string_pretty(&service.metrics()).unwrap());
    server.abort();
    service.shutdown();
}
