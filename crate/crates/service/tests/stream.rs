mod common;

use std::time::Duration;

use futures_util::StreamExt;
use serde_json::Value;
use tokio_tungstenite::tungstenite::Message;
use visguardian::{Mode, Occluder};
use visguardian_service::ServeOptions;

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Event(Value),
    Frame { meta: Value, png: Vec<u8> },
}

async fn collect(url: String, until: Duration) -> Vec<Item> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut items = Vec::new();
    let mut pending_png: Option<Vec<u8>> = None;
    let deadline = tokio::time::Instant::now() + until;
    while let Ok(Some(msg)) = tokio::time::timeout_at(deadline, ws.next()).await {
        match msg.unwrap() {
            Message::Binary(bytes) => {
                assert!(pending_png.is_none(), "two PNGs without metadata");
                pending_png = Some(bytes.to_vec());
            }
            Message::Text(text) => {
                let value: Value = serde_json::from_str(text.as_str()).unwrap();
                if value.get("seq").is_some() {
                    items.push(Item::Event(value));
                } else {
                    let png = pending_png.take().expect("metadata follows a PNG");
                    items.push(Item::Frame { meta: value, png });
                }
            }
            _ => {}
        }
    }
    items
}

fn frames(items: &[Item]) -> Vec<(&Value, &Vec<u8>)> {
    items
        .iter()
        .filter_map(|i| match i {
            Item::Frame { meta, png } => Some((meta, png)),
            Item::Event(_) => None,
        })
        .collect()
}

fn events(items: &[Item]) -> Vec<&Value> {
    items
        .iter()
        .filter_map(|i| match i {
            Item::Event(e) => Some(e),
            Item::Frame { .. } => None,
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn two_clients_see_the_same_stream() {
    let options = ServeOptions { fps_cap: 25.0, frame_buffer: 512, occluder: Occluder::SolidFill, ..ServeOptions::default() };
    let service = common::start(Mode::VisGuardian, options);
    let router = service.router();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router.clone();
    tokio::spawn(async move { axum::serve(listener, app).await });

    let (_, initial) = common::call(&router, "GET", "/policy", None).await;
    let url = format!("ws://{addr}/stream");
    let a = tokio::spawn(collect(url.clone(), Duration::from_millis(1500)));
    let b = tokio::spawn(collect(url, Duration::from_millis(1500)));
    tokio::time::sleep(Duration::from_millis(500)).await;
    let body = r#"{"kind":"ApplyGroup","anchor":"underwear","dimension":"Category","action":"Reveal"}"#;
    let (status, record) = common::call(&router, "POST", "/interactions", Some(body)).await;
    assert!(status.is_success());
    common::call(&router, "POST", "/apps/default/request", None).await;
    let (a, b) = (a.await.unwrap(), b.await.unwrap());

    for items in [&a, &b] {
        // sequence numbers are gap-free from the subscription point
        let seqs: Vec<u64> = events(items).iter().map(|e| e["seq"].as_u64().unwrap()).collect();
        assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1), "{seqs:?}");
        let changed: Vec<&Value> = events(items).into_iter().filter(|e| e["kind"] == "PolicyChanged").collect();
        assert_eq!(changed.len(), 1);
        assert_eq!(changed[0]["payload"], record);
        assert!(events(items).iter().any(|e| e["kind"] == "PromptRequested" && e["payload"] == "default"));

        // every frame carries the digest in force when it was produced, and
        // the audit record arrives before the first frame under it
        let mut digest = initial["digest"].clone();
        let mut numbers = Vec::new();
        for item in items {
            match item {
                Item::Event(e) if e["kind"] == "PolicyChanged" => digest = e["payload"]["digest"].clone(),
                Item::Event(_) => {}
                Item::Frame { meta, .. } => {
                    assert_eq!(meta["policy_digest"], digest);
                    numbers.push(meta["frame"].as_u64().unwrap());
                }
            }
        }
        assert!(numbers.len() >= 20, "only {} frames", numbers.len());
        assert!(numbers.windows(2).all(|w| w[1] == w[0] + 1), "frames dropped or reordered");
    }

    // identical content for frames both clients received
    let fb = frames(&b);
    let mut shared = 0;
    for (meta, png) in frames(&a) {
        if let Some((_, other)) = fb.iter().find(|(m, _)| m["frame"] == meta["frame"]) {
            assert_eq!(png, *other);
            shared += 1;
        }
    }
    assert!(shared >= 20);
    let ea: Vec<_> = events(&a).into_iter().filter(|e| e["kind"] != "NewClass").collect();
    let eb: Vec<_> = events(&b).into_iter().filter(|e| e["kind"] != "NewClass").collect();
    assert_eq!(ea, eb);

    // hidden boxes that overlap nothing else are solid gray inside the outline
    let mut checked = 0;
    for (meta, png) in frames(&a) {
        let img = image::load_from_memory(png).unwrap().to_rgb8();
        let dets = meta["detections"].as_array().unwrap();
        let rect = |d: &Value| -> [u32; 4] {
            let b: Vec<u32> = d["bbox"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as u32).collect();
            [b[0], b[1], b[0] + b[2], b[1] + b[3]]
        };
        for (i, d) in dets.iter().enumerate() {
            if d["state"] != "Hidden" {
                continue;
            }
            let r = rect(d);
            let overlaps = dets.iter().enumerate().any(|(j, o)| {
                let q = rect(o);
                j != i && q[0] < r[2] && r[0] < q[2] && q[1] < r[3] && r[1] < q[3]
            });
            if overlaps {
                continue;
            }
            for y in r[1] + 2..r[3].saturating_sub(2) {
                for x in r[0] + 2..r[2].saturating_sub(2) {
                    assert_eq!(img.get_pixel(x, y).0, [128, 128, 128]);
                }
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
    service.shutdown();
}
