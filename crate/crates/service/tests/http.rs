mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::{call, start};
use serde_json::{json, Value};
use visguardian::policy::PolicyFile;
use visguardian::{Mode, PolicyStore, Taxonomy};
use visguardian_service::ServeOptions;

fn strings(v: &Value) -> Vec<&str> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap()).collect()
}

#[tokio::test]
async fn taxonomy_and_groups() {
    let service = start(Mode::VisGuardian, ServeOptions::default());
    let router = service.router();

    let (status, doc) = call(&router, "GET", "/taxonomy", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(doc["entries"].as_array().unwrap().len(), 22);

    let (status, groups) = call(&router, "GET", "/groups?anchor=underwear", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(strings(&groups["sensitivity_group"]), ["jewelry", "medicine", "person", "underwear"]);
    assert_eq!(strings(&groups["category_group"]), ["legging", "pajamas", "skirt", "swimsuit", "underwear"]);
    assert_eq!(strings(&groups["spatial_group"]), ["jewelry", "mobile phone", "person", "underwear"]);

    let (status, groups) = call(&router, "GET", "/groups?anchor=Mobile%20Phone", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(groups["anchor"], "mobile phone");

    assert_eq!(call(&router, "GET", "/groups?anchor=doorknob", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&router, "GET", "/groups", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn toggle_flips_state_and_digest() {
    let service = start(Mode::VisGuardian, ServeOptions::default());
    let router = service.router();
    let (_, before) = call(&router, "GET", "/policy", None).await;
    assert_eq!(before["states"]["person"], "Hidden");
    assert_eq!(before["mode"], "VisGuardian");

    let (status, record) =
        call(&router, "POST", "/interactions", Some(r#"{"kind":"ToggleClass","class":"person"}"#)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(record["delta"], json!([{"class": "person", "old": "Hidden", "new": "Revealed"}]));

    let (_, after) = call(&router, "GET", "/policy", None).await;
    assert_eq!(after["states"]["person"], "Revealed");
    assert_ne!(after["digest"], before["digest"]);
    assert_eq!(after["digest"], record["digest"]);
    assert!(strings(&after["observed"]).contains(&"person"));
}

#[tokio::test]
async fn interaction_errors_map_to_status_codes() {
    let service = start(Mode::VisGuardian, ServeOptions::default());
    let router = service.router();
    let cases = [
        ("{not json", StatusCode::BAD_REQUEST),
        (r#"{"kind":"Teleport"}"#, StatusCode::BAD_REQUEST),
        (r#"{"kind":"ToggleClass","class":"doorknob"}"#, StatusCode::NOT_FOUND),
        (r#"{"kind":"ApplyGroup","anchor":"doorknob","dimension":"Spatial","action":"Reveal"}"#, StatusCode::NOT_FOUND),
        (r#"{"kind":"SetSlider","level":2}"#, StatusCode::CONFLICT),
        (r#"{"kind":"SetClass","class":"book","state":"Revealed"}"#, StatusCode::CONFLICT),
    ];
    for (body, expected) in cases {
        let (status, err) = call(&router, "POST", "/interactions", Some(body)).await;
        assert_eq!(status, expected, "{body}");
        assert!(err["error"].is_string());
    }
    let (_, policy) = call(&router, "GET", "/policy", None).await;
    let hidden = policy["states"].as_object().unwrap().values().all(|s| s == "Hidden");
    assert!(hidden, "rejected events must not change the store");

    let slider = start(Mode::SliderBaseline, ServeOptions::default());
    let router = slider.router();
    let (status, _) = call(&router, "POST", "/interactions", Some(r#"{"kind":"SetSlider","level":9}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&router, "POST", "/interactions", Some(r#"{"kind":"SetSlider","level":3}"#)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, policy) = call(&router, "GET", "/policy", None).await;
    assert_eq!(policy["slider_level"], 3);
    assert_eq!(policy["states"]["book"], "Revealed");
    assert_eq!(policy["states"]["gun"], "Hidden");
}

#[tokio::test]
async fn app_requests_and_metrics() {
    let service = start(Mode::VisGuardian, ServeOptions { fps_cap: 50.0, ..ServeOptions::default() });
    let router = service.router();
    let (status, body) = call(&router, "POST", "/apps/default/request", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert!(body["seq"].as_u64().unwrap() >= 1);
    assert_eq!(call(&router, "POST", "/apps/other/request", None).await.0, StatusCode::NOT_FOUND);

    tokio::time::sleep(Duration::from_millis(300)).await;
    let (status, metrics) = call(&router, "GET", "/metrics", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(metrics["frames_processed"].as_u64().unwrap() >= 3, "{metrics}");
    assert!(metrics["latency_ms"]["policy"]["p95"].as_f64().unwrap() >= 0.0);
    assert_eq!(metrics["new_class_events"], 4);
    assert_eq!(metrics["clients"], 0);

    let (_, policy) = call(&router, "GET", "/policy", None).await;
    let observed = strings(&policy["observed"]);
    assert_eq!(observed, ["book", "person", "swimsuit", "underwear"]);
}

#[tokio::test]
async fn policy_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let service = start(
        Mode::VisGuardian,
        ServeOptions { policy_out: Some(path.clone()), ..ServeOptions::default() },
    );
    let router = service.router();
    let body = r#"{"kind":"ApplyGroup","anchor":"underwear","dimension":"Category","action":"Reveal"}"#;
    let (status, record) = call(&router, "POST", "/interactions", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    service.shutdown();

    let file: PolicyFile = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let restored = PolicyStore::from_file(std::sync::Arc::new(Taxonomy::bundled()), file);
    assert_eq!(restored.digest(), record["digest"].as_str().unwrap());
    assert_eq!(restored.resolve("swimsuit"), visguardian::policy::Resolution::Revealed);
}
