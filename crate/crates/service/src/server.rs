//! HTTP and WebSocket front end over a looping, sanitizing pipeline.
//!
//! A single worker thread owns the [`Pipeline`]. Request handlers never
//! touch the policy store directly: interactions are queued to the worker,
//! which applies them between frames and answers with the audit record.
//! Reads are served from snapshots the worker publishes.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self as std_mpsc, RecvTimeoutError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};

use visguardian::detect::Detector;
use visguardian::pipeline::{build_report, encode_png, FrameRecord, Pipeline, ResolvedDetection, RunReport};
use visguardian::policy::{query_groups, AuditRecord, PolicyError};
use visguardian::sanitize::render_overlay;
use visguardian::{Frame, InteractionEvent, Mode, Occluder, PolicyStore, Taxonomy, VisibilityState};

/// Frames kept for the rolling metrics window.
const METRICS_WINDOW: usize = 600;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", content = "payload")]
pub enum ApiEventBody {
    NewClass(String),
    PolicyChanged(AuditRecord),
    PromptRequested(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: ApiEventBody,
}

/// Metadata sent as a text message right after each frame's PNG.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameMessage {
    pub frame: u64,
    pub detections: Vec<ResolvedDetection>,
    pub policy_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PolicySnapshot {
    pub app_id: String,
    pub mode: Mode,
    pub slider_level: Option<u8>,
    pub states: BTreeMap<String, VisibilityState>,
    pub observed: BTreeSet<String>,
    pub digest: String,
}

impl PolicySnapshot {
    fn of(store: &PolicyStore) -> Self {
        PolicySnapshot {
            app_id: store.app_id().to_string(),
            mode: store.mode(),
            slider_level: store.slider_level().map(|l| l.get()),
            states: store.states().clone(),
            observed: store.observed().clone(),
            digest: store.digest().to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricsSnapshot {
    #[serde(flatten)]
    pub report: RunReport,
    pub frames_sent: u64,
    pub frames_dropped: u64,
    pub clients: usize,
}

struct FramePacket {
    png: Bytes,
    meta: Utf8Bytes,
}

struct Client {
    id: u64,
    events: mpsc::UnboundedSender<Utf8Bytes>,
    frames: mpsc::Sender<Arc<FramePacket>>,
}

#[derive(Default)]
struct HubInner {
    seq: u64,
    next_client: u64,
    clients: Vec<Client>,
}

/// Fan-out to WebSocket clients. Events go through unbounded queues and
/// are never dropped; frames go through bounded queues and are dropped for
/// clients that fall behind.
#[derive(Default)]
struct Hub {
    inner: Mutex<HubInner>,
    frames_sent: AtomicU64,
    frames_dropped: AtomicU64,
}

struct Subscription {
    id: u64,
    events: mpsc::UnboundedReceiver<Utf8Bytes>,
    frames: mpsc::Receiver<Arc<FramePacket>>,
}

impl Hub {
    fn subscribe(&self, frame_buffer: usize) -> Subscription {
        let (etx, erx) = mpsc::unbounded_channel();
        let (ftx, frx) = mpsc::channel(frame_buffer.max(1));
        let mut inner = self.inner.lock().unwrap();
        let id = inner.next_client;
        inner.next_client += 1;
        inner.clients.push(Client { id, events: etx, frames: ftx });
        Subscription { id, events: erx, frames: frx }
    }

    fn unsubscribe(&self, id: u64) {
        self.inner.lock().unwrap().clients.retain(|c| c.id != id);
    }

    fn publish(&self, body: ApiEventBody) -> u64 {
        let mut inner = self.inner.lock().unwrap();
        inner.seq += 1;
        let seq = inner.seq;
        let text: Utf8Bytes = serde_json::to_string(&ApiEvent { seq, body }).expect("serializable").into();
        inner.clients.retain(|c| c.events.send(text.clone()).is_ok());
        seq
    }

    fn send_frame(&self, packet: FramePacket) {
        let packet = Arc::new(packet);
        let mut inner = self.inner.lock().unwrap();
        inner.clients.retain(|c| match c.frames.try_send(Arc::clone(&packet)) {
            Ok(()) => {
                self.frames_sent.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(mpsc::error::TrySendError::Full(_)) => {
                self.frames_dropped.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
    }

    fn client_count(&self) -> usize {
        self.inner.lock().unwrap().clients.len()
    }
}

enum Command {
    Apply(InteractionEvent, oneshot::Sender<Result<AuditRecord, PolicyError>>),
}

struct Shared {
    taxonomy: Arc<Taxonomy>,
    app_id: String,
    policy: RwLock<PolicySnapshot>,
    metrics: RwLock<MetricsSnapshot>,
    hub: Hub,
    commands: std_mpsc::Sender<Command>,
    frame_buffer: usize,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Frames per second of the looping source; must be positive.
    pub fps_cap: f64,
    /// Per-client frame queue length.
    pub frame_buffer: usize,
    /// Where to write the policy file after every change.
    pub policy_out: Option<PathBuf>,
    pub occluder: Occluder,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            fps_cap: 10.0,
            frame_buffer: 8,
            policy_out: None,
            occluder: Occluder::FrozenPatch,
        }
    }
}

/// A running pipeline worker plus the shared state its routes read.
pub struct Service {
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl Service {
    /// Starts the worker. `frames` are replayed in a loop; tracking and
    /// frozen patches reset at each wrap.
    pub fn start(
        store: PolicyStore,
        detector: Box<dyn Detector>,
        frames: Vec<(u64, Frame)>,
        options: ServeOptions,
    ) -> Service {
        assert!(options.fps_cap > 0.0 && options.fps_cap.is_finite(), "fps cap must be positive");
        let (tx, rx) = std_mpsc::channel();
        let shared = Arc::new(Shared {
            taxonomy: Arc::clone(store.taxonomy()),
            app_id: store.app_id().to_string(),
            policy: RwLock::new(PolicySnapshot::of(&store)),
            metrics: RwLock::new(MetricsSnapshot::default()),
            hub: Hub::default(),
            commands: tx,
            frame_buffer: options.frame_buffer,
        });
        let stop = Arc::new(AtomicBool::new(false));
        let pipeline = Pipeline::new(detector, store, options.occluder);
        let worker = Worker {
            pipeline,
            frames,
            shared: Arc::clone(&shared),
            commands: rx,
            stop: Arc::clone(&stop),
            budget: Duration::from_secs_f64(1.0 / options.fps_cap),
            policy_out: options.policy_out,
            counter: 0,
            rows: VecDeque::new(),
            interactions: 0,
            new_classes: 0,
        };
        let handle = std::thread::Builder::new()
            .name("visguardian-pipeline".into())
            .spawn(move || worker.run())
            .expect("spawn pipeline thread");
        Service { shared, stop, worker: Some(handle) }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/taxonomy", get(get_taxonomy))
            .route("/policy", get(get_policy))
            .route("/groups", get(get_groups))
            .route("/interactions", post(post_interaction))
            .route("/apps/{id}/request", post(post_request))
            .route("/metrics", get(get_metrics))
            .route("/stream", get(stream))
            .with_state(Arc::clone(&self.shared))
    }

    pub fn policy(&self) -> PolicySnapshot {
        self.shared.policy.read().unwrap().clone()
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.shared.metrics.read().unwrap().clone()
    }

    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.worker.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.halt();
    }
}

struct Worker {
    pipeline: Pipeline,
    frames: Vec<(u64, Frame)>,
    shared: Arc<Shared>,
    commands: std_mpsc::Receiver<Command>,
    stop: Arc<AtomicBool>,
    budget: Duration,
    policy_out: Option<PathBuf>,
    counter: u64,
    rows: VecDeque<(Instant, FrameRecord)>,
    interactions: u64,
    new_classes: u64,
}

impl Worker {
    fn run(mut self) {
        let mut cursor = 0usize;
        while !self.stop.load(Ordering::SeqCst) {
            let frame_start = Instant::now();
            if !self.frames.is_empty() {
                if cursor == 0 && self.counter > 0 {
                    self.pipeline.reset_stream();
                }
                self.step(cursor, frame_start);
                cursor = (cursor + 1) % self.frames.len();
            }
            // serve queued interactions until the frame budget is spent
            loop {
                let remaining = self.budget.saturating_sub(frame_start.elapsed());
                match self.commands.recv_timeout(remaining) {
                    Ok(cmd) => self.handle(cmd),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
                if self.stop.load(Ordering::SeqCst) {
                    return;
                }
            }
        }
    }

    fn step(&mut self, cursor: usize, frame_start: Instant) {
        let (index, frame) = &self.frames[cursor];
        let mut processed = self.pipeline.process(*index, frame);
        for event in &processed.new_classes {
            self.shared.hub.publish(ApiEventBody::NewClass(event.class.clone()));
        }
        if !processed.new_classes.is_empty() {
            self.new_classes += processed.new_classes.len() as u64;
            self.publish_policy();
        }

        let encode_start = Instant::now();
        let overlay = render_overlay(&processed.frame, &processed.detections, &processed.view, None);
        let png = encode_png(&overlay).expect("in-memory PNG encode");
        processed.timings.encode_ms = encode_start.elapsed().as_secs_f64() * 1e3;
        let meta = FrameMessage {
            frame: self.counter,
            detections: processed.resolved,
            policy_digest: processed.view.digest().to_string(),
        };
        self.shared.hub.send_frame(FramePacket {
            png: Bytes::from(png),
            meta: serde_json::to_string(&meta).expect("serializable").into(),
        });
        processed.timings.total_ms = frame_start.elapsed().as_secs_f64() * 1e3;

        let t = processed.timings;
        self.rows.push_back((frame_start, FrameRecord {
            frame: self.counter,
            digest: meta.policy_digest,
            detect_ms: t.detect_ms,
            policy_ms: t.policy_ms,
            sanitize_ms: t.sanitize_ms,
            encode_ms: t.encode_ms,
            total_ms: t.total_ms,
        }));
        if self.rows.len() > METRICS_WINDOW {
            self.rows.pop_front();
        }
        self.counter += 1;
        self.publish_metrics();
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Apply(mut event, reply) => {
                event.timestamp = self.counter;
                let result = self.pipeline.apply(event);
                if let Ok(record) = &result {
                    self.interactions += 1;
                    // delivered on the stream before it is visible via GET /policy
                    self.shared.hub.publish(ApiEventBody::PolicyChanged(record.clone()));
                    self.publish_policy();
                    self.persist();
                }
                let _ = reply.send(result);
            }
        }
    }

    fn publish_policy(&self) {
        *self.shared.policy.write().unwrap() = PolicySnapshot::of(self.pipeline.store());
    }

    fn publish_metrics(&self) {
        let rows: Vec<FrameRecord> = self.rows.iter().map(|(_, r)| r.clone()).collect();
        let elapsed = self.rows.front().map_or(0.0, |(t, _)| t.elapsed().as_secs_f64());
        let mut report = build_report(&rows, &[], self.new_classes, self.pipeline.store().digest(), elapsed);
        report.frames_processed = self.counter;
        report.interactions_applied = self.interactions;
        report.events_emitted = self.new_classes + self.interactions;
        let hub = &self.shared.hub;
        *self.shared.metrics.write().unwrap() = MetricsSnapshot {
            report,
            frames_sent: hub.frames_sent.load(Ordering::Relaxed),
            frames_dropped: hub.frames_dropped.load(Ordering::Relaxed),
            clients: hub.client_count(),
        };
    }

    fn persist(&self) {
        let Some(path) = &self.policy_out else { return };
        let file = self.pipeline.store().to_file();
        let result = serde_json::to_vec_pretty(&file)
            .map_err(std::io::Error::from)
            .and_then(|bytes| std::fs::write(path, bytes));
        if let Err(e) = result {
            tracing::warn!(path = %path.display(), error = %e, "could not write policy file");
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

async fn get_taxonomy(State(s): State<Arc<Shared>>) -> Response {
    Json(s.taxonomy.document()).into_response()
}

async fn get_policy(State(s): State<Arc<Shared>>) -> Json<PolicySnapshot> {
    Json(s.policy.read().unwrap().clone())
}

async fn get_groups(State(s): State<Arc<Shared>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let Some(anchor) = q.get("anchor") else {
        return error(StatusCode::BAD_REQUEST, "missing `anchor` query parameter");
    };
    match query_groups(&s.taxonomy, anchor) {
        Ok(groups) => Json(groups).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e.to_string()),
    }
}

async fn post_interaction(State(s): State<Arc<Shared>>, body: Result<Json<InteractionEvent>, JsonRejection>) -> Response {
    let event = match body {
        Ok(Json(event)) => event,
        Err(rejection) => return error(StatusCode::BAD_REQUEST, rejection.body_text()),
    };
    let (tx, rx) = oneshot::channel();
    if s.commands.send(Command::Apply(event, tx)).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "pipeline stopped");
    }
    match rx.await {
        Ok(Ok(record)) => Json(record).into_response(),
        Ok(Err(e)) => {
            let status = match e {
                PolicyError::ModeMismatch { .. } => StatusCode::CONFLICT,
                PolicyError::NotFound(_) => StatusCode::NOT_FOUND,
                PolicyError::InvalidLevel(_) => StatusCode::BAD_REQUEST,
            };
            error(status, e.to_string())
        }
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "pipeline stopped"),
    }
}

#[derive(Serialize)]
struct Accepted {
    seq: u64,
}

async fn post_request(State(s): State<Arc<Shared>>, Path(id): Path<String>) -> Response {
    if id != s.app_id {
        return error(StatusCode::NOT_FOUND, format!("unknown application `{id}`"));
    }
    let seq = s.hub.publish(ApiEventBody::PromptRequested(id));
    (StatusCode::ACCEPTED, Json(Accepted { seq })).into_response()
}

async fn get_metrics(State(s): State<Arc<Shared>>) -> Json<MetricsSnapshot> {
    let mut snapshot = s.metrics.read().unwrap().clone();
    snapshot.clients = s.hub.client_count();
    Json(snapshot)
}

async fn stream(State(s): State<Arc<Shared>>, ws: WebSocketUpgrade) -> Response {
    // subscribe before the upgrade completes so no event is missed
    let sub = s.hub.subscribe(s.frame_buffer);
    ws.on_upgrade(move |socket| client_loop(socket, sub, s))
}

async fn client_loop(mut socket: WebSocket, mut sub: Subscription, shared: Arc<Shared>) {
    loop {
        tokio::select! {
            biased;
            event = sub.events.recv() => match event {
                Some(text) => {
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                None => break,
            },
            packet = sub.frames.recv() => match packet {
                Some(p) => {
                    if socket.send(Message::Binary(p.png.clone())).await.is_err()
                        || socket.send(Message::Text(p.meta.clone())).await.is_err()
                    {
                        break;
                    }
                }
                None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    shared.hub.unsubscribe(sub.id);
}
