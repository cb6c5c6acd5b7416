//! Per-frame orchestration: detect, track, observe, snapshot, sanitize,
//! write. Interaction events are applied between frames only, so every
//! output frame is produced under exactly one policy digest.

use std::collections::VecDeque;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BBox, DetectError, Detection, Detector, FixtureDetector, Tracker};
use crate::policy::{
    AuditLog, AuditRecord, InteractionEvent, Mode, NewClassEvent, PolicyError, PolicyStore, PolicyView,
    Resolution,
};
use crate::sanitize::{sanitize_frame, ActionRecord, Frame, Occluder, PatchCache};
use crate::taxonomy::{Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("script event {index} is invalid: {source}")]
    InvalidScript {
        index: usize,
        #[source]
        source: PolicyError,
    },
    #[error("failed to parse script: {0}")]
    ScriptParse(String),
    #[error("frame source error: {0}")]
    Source(String),
    #[error("frame sink error after {} frames: {message}", report.frames_processed)]
    Sink {
        message: String,
        report: Box<RunReport>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Errors caused by bad inputs rather than by a failure mid-run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Taxonomy(_)
                | PipelineError::Detect(_)
                | PipelineError::InvalidScript { .. }
                | PipelineError::ScriptParse(_)
        )
    }
}

// ---------------------------------------------------------------------------
// Frame I/O

pub fn decode_png(bytes: &[u8]) -> Result<Frame, PipelineError> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| PipelineError::Source(e.to_string()))?
        .decode()
        .map_err(|e| PipelineError::Source(e.to_string()))?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Frame::new(w, h, img.into_raw()).map_err(|e| PipelineError::Source(e.to_string()))
}

pub fn read_png(path: &Path) -> Result<Frame, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::Source(format!("{}: {e}", path.display())))?;
    decode_png(&bytes)
}

/// Lossless, deterministic PNG encoding.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>, image::ImageError> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Adaptive).write_image(
        frame.pixels(),
        frame.width(),
        frame.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

pub fn frame_file_name(index: u64) -> String {
    format!("{index:06}.png")
}

pub trait FrameSource {
    /// Next `(frame_index, frame)`; `None` once exhausted.
    fn next_frame(&mut self) -> Option<Result<(u64, Frame), PipelineError>>;
}

/// PNG files with numeric stems (`000000.png`, `000001.png`, ...), read in
/// numeric order. The stem is the frame index.
pub struct PngDirSource {
    files: VecDeque<(u64, PathBuf)>,
}

impl PngDirSource {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir)
            .map_err(|e| PipelineError::Config(format!("frame directory {}: {e}", dir.display())))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() != Some("png") {
                continue;
            }
            if let Some(index) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
                files.push((index, path));
            }
        }
        files.sort();
        Ok(PngDirSource { files: files.into() })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for PngDirSource {
    fn next_frame(&mut self) -> Option<Result<(u64, Frame), PipelineError>> {
        let (index, path) = self.files.pop_front()?;
        Some(read_png(&path).map(|f| (index, f)))
    }
}

#[derive(Default)]
pub struct MemorySource {
    frames: VecDeque<(u64, Frame)>,
}

impl MemorySource {
    pub fn new(frames: impl IntoIterator<Item = (u64, Frame)>) -> Self {
        MemorySource {
            frames: frames.into_iter().collect(),
        }
    }
}

impl FrameSource for MemorySource {
    fn next_frame(&mut self) -> Option<Result<(u64, Frame), PipelineError>> {
        self.frames.pop_front().map(Ok)
    }
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn next_frame(&mut self) -> Option<Result<(u64, Frame), PipelineError>> {
        (**self).next_frame()
    }
}

/// Receives sanitized frames only.
pub trait FrameSink {
    fn write(&mut self, index: u64, frame: &Frame) -> Result<(), String>;
}

pub struct PngDirSink {
    dir: PathBuf,
}

impl PngDirSink {
    pub fn create(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(PngDirSink { dir })
    }
}

impl FrameSink for PngDirSink {
    fn write(&mut self, index: u64, frame: &Frame) -> Result<(), String> {
        let bytes = encode_png(frame).map_err(|e| e.to_string())?;
        fs::write(self.dir.join(frame_file_name(index)), bytes).map_err(|e| e.to_string())
    }
}

/// Keeps every frame in memory.
#[derive(Default)]
pub struct MemorySink {
    pub frames: Vec<(u64, Frame)>,
}

impl FrameSink for MemorySink {
    fn write(&mut self, index: u64, frame: &Frame) -> Result<(), String> {
        self.frames.push((index, frame.clone()));
        Ok(())
    }
}

/// Encodes to PNG in memory and discards the bytes.
#[derive(Default)]
pub struct EncodeOnlySink {
    pub bytes_encoded: u64,
}

impl FrameSink for EncodeOnlySink {
    fn write(&mut self, _index: u64, frame: &Frame) -> Result<(), String> {
        let bytes = encode_png(frame).map_err(|e| e.to_string())?;
        self.bytes_encoded += bytes.len() as u64;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Timing and reports

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub detect_ms: f64,
    /// observe + snapshot + resolve
    pub policy_ms: f64,
    pub sanitize_ms: f64,
    pub encode_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub min: f64,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencySummary {
    /// Nearest-rank statistics; all zeros for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencySummary {
            min: s[0],
            median: rank(0.5),
            p95: rank(0.95),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageLatencies {
    pub detect: LatencySummary,
    pub policy: LatencySummary,
    pub sanitize: LatencySummary,
    pub encode: LatencySummary,
    pub total: LatencySummary,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames_processed: u64,
    /// New-class prompts plus applied interactions.
    pub events_emitted: u64,
    pub new_class_events: u64,
    pub interactions_applied: u64,
    pub latency_ms: StageLatencies,
    pub achieved_fps: f64,
    pub audit_digest: String,
    /// Set when the run was cut short by a sink failure.
    #[serde(default)]
    pub partial: bool,
}

/// One row of the per-frame CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: u64,
    pub digest: String,
    pub detect_ms: f64,
    pub policy_ms: f64,
    pub sanitize_ms: f64,
    pub encode_ms: f64,
    pub total_ms: f64,
}

// ---------------------------------------------------------------------------
// Pipeline

/// A detection after policy resolution, as reported to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDetection {
    pub track: Option<u32>,
    pub class: String,
    pub bbox: BBox,
    pub state: Resolution,
}

pub struct ProcessedFrame {
    pub index: u64,
    pub frame: Frame,
    pub detections: Vec<Detection>,
    pub resolved: Vec<ResolvedDetection>,
    pub view: PolicyView,
    pub new_classes: Vec<NewClassEvent>,
    pub actions: Vec<ActionRecord>,
    pub timings: StageTimings,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Owns the per-stream state: tracker, policy store and patch cache.
pub struct Pipeline {
    detector: Box<dyn Detector>,
    tracker: Tracker,
    store: PolicyStore,
    cache: PatchCache,
    occluder: Occluder,
}

impl Pipeline {
    pub fn new(detector: Box<dyn Detector>, store: PolicyStore, occluder: Occluder) -> Self {
        Pipeline {
            detector,
            tracker: Tracker::new(),
            store,
            cache: PatchCache::new(),
            occluder,
        }
    }

    pub fn store(&self) -> &PolicyStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut PolicyStore {
        &mut self.store
    }

    pub fn apply(&mut self, event: InteractionEvent) -> Result<AuditRecord, PolicyError> {
        self.store.apply(event)
    }

    /// Clears tracking and frozen patches, e.g. when a looped source wraps.
    pub fn reset_stream(&mut self) {
        self.tracker.reset();
        self.cache.clear();
    }

    pub fn process(&mut self, index: u64, frame: &Frame) -> ProcessedFrame {
        let start = Instant::now();
        let raw = self.detector.detect(index);
        let detections = self.tracker.update(raw);
        let detected = Instant::now();

        let new_classes = self
            .store
            .observe(detections.iter().filter_map(|d| d.class.sensitive()), index);
        let view = self.store.snapshot();
        let resolved: Vec<ResolvedDetection> = detections
            .iter()
            .map(|d| ResolvedDetection {
                track: d.track_id,
                class: d.class.name().to_string(),
                bbox: d.bbox,
                state: view.resolve_label(&d.class),
            })
            .collect();
        let resolved_at = Instant::now();

        let out = sanitize_frame(frame, &detections, &view, &mut self.cache, self.occluder);
        let done = Instant::now();

        ProcessedFrame {
            index,
            frame: out.frame,
            detections,
            resolved,
            view,
            new_classes,
            actions: out.actions,
            timings: StageTimings {
                detect_ms: ms(detected - start),
                policy_ms: ms(resolved_at - detected),
                sanitize_ms: ms(done - resolved_at),
                encode_ms: 0.0,
                total_ms: ms(done - start),
            },
        }
    }
}

/// Checks every script event against a scratch copy of `store`, in order.
pub fn validate_script(store: &PolicyStore, script: &[InteractionEvent]) -> Result<(), PipelineError> {
    let mut scratch = store.clone();
    for (index, event) in script.iter().enumerate() {
        scratch
            .apply(event.clone())
            .map_err(|source| PipelineError::InvalidScript { index, source })?;
    }
    Ok(())
}

/// Parses a script: a JSON array of events, or one event per line.
pub fn parse_script(text: &str) -> Result<Vec<InteractionEvent>, PipelineError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed).map_err(|e| PipelineError::ScriptParse(e.to_string()));
    }
    trimmed
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::ScriptParse(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<InteractionEvent>, PipelineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("script {}: {e}", path.display())))?;
    parse_script(&text)
}

#[derive(Debug, Clone, Default)]
pub struct DriveOptions {
    pub fps_cap: Option<f64>,
}

/// Output of [`drive`].
pub struct DriveOutcome {
    pub report: RunReport,
    pub frames: Vec<FrameRecord>,
    pub audit: Vec<AuditRecord>,
    pub new_classes: Vec<NewClassEvent>,
}

/// Runs `source` through `pipeline` into `sink`, applying each script event
/// just before the first frame whose index is at or after its timestamp.
/// Events timed after the last frame are applied once the source is
/// exhausted. The script is validated up front; nothing is written if any
/// event is invalid.
pub fn drive(
    pipeline: &mut Pipeline,
    source: &mut dyn FrameSource,
    sink: &mut dyn FrameSink,
    script: &[InteractionEvent],
    options: &DriveOptions,
    mut audit_log: Option<&mut AuditLog>,
) -> Result<DriveOutcome, PipelineError> {
    if let Some(cap) = options.fps_cap {
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(PipelineError::Config(format!("fps cap must be positive, got {cap}")));
        }
    }
    validate_script(pipeline.store(), script)?;
    let mut pending: Vec<InteractionEvent> = script.to_vec();
    pending.sort_by_key(|e| e.timestamp);
    let mut pending: VecDeque<InteractionEvent> = pending.into();

    let frame_budget = options.fps_cap.map(|c| Duration::from_secs_f64(1.0 / c));
    let mut audit = Vec::new();
    let mut new_classes = Vec::new();
    let mut rows = Vec::new();
    let run_start = Instant::now();

    let mut sink_failure = None;
    while let Some(next) = source.next_frame() {
        let frame_start = Instant::now();
        let (index, frame) = next?;
        apply_pending(pipeline, &mut pending, &mut audit, audit_log.as_deref_mut(), Some(index))?;

        let mut processed = pipeline.process(index, &frame);
        let encode_start = Instant::now();
        if let Err(message) = sink.write(index, &processed.frame) {
            sink_failure = Some(message);
            break;
        }
        processed.timings.encode_ms = ms(encode_start.elapsed());
        processed.timings.total_ms = ms(frame_start.elapsed());
        let t = processed.timings;
        rows.push(FrameRecord {
            frame: index,
            digest: processed.view.digest().to_string(),
            detect_ms: t.detect_ms,
            policy_ms: t.policy_ms,
            sanitize_ms: t.sanitize_ms,
            encode_ms: t.encode_ms,
            total_ms: t.total_ms,
        });
        new_classes.extend(processed.new_classes);

        if let Some(budget) = frame_budget {
            if let Some(rest) = budget.checked_sub(frame_start.elapsed()) {
                std::thread::sleep(rest);
            }
        }
    }
    if sink_failure.is_none() {
        apply_pending(pipeline, &mut pending, &mut audit, audit_log, None)?;
    }

    let elapsed = run_start.elapsed().as_secs_f64();
    let report = build_report(&rows, &audit, new_classes.len() as u64, pipeline.store().digest(), elapsed);
    if let Some(message) = sink_failure {
        let mut report = report;
        report.partial = true;
        return Err(PipelineError::Sink {
            message,
            report: Box::new(report),
        });
    }
    Ok(DriveOutcome {
        report,
        frames: rows,
        audit,
        new_classes,
    })
}

fn apply_pending(
    pipeline: &mut Pipeline,
    pending: &mut VecDeque<InteractionEvent>,
    audit: &mut Vec<AuditRecord>,
    mut audit_log: Option<&mut AuditLog>,
    limit: Option<u64>,
) -> Result<(), PipelineError> {
    while pending.front().is_some_and(|e| limit.is_none_or(|l| e.timestamp <= l)) {
        let event = pending.pop_front().expect("front checked");
        let record = pipeline
            .apply(event)
            .map_err(|source| PipelineError::InvalidScript { index: audit.len(), source })?;
        if let Some(log) = audit_log.as_deref_mut() {
            log.append(&record)?;
        }
        audit.push(record);
    }
    Ok(())
}

/// Aggregates per-frame records into a report. `digest` is used as the
/// audit digest when no interaction was applied.
pub fn build_report(
    rows: &[FrameRecord],
    audit: &[AuditRecord],
    new_class_events: u64,
    digest: &str,
    elapsed_secs: f64,
) -> RunReport {
    let summary = |f: fn(&FrameRecord) -> f64| {
        LatencySummary::from_samples(&rows.iter().map(f).collect::<Vec<_>>())
    };
    RunReport {
        frames_processed: rows.len() as u64,
        events_emitted: new_class_events + audit.len() as u64,
        new_class_events,
        interactions_applied: audit.len() as u64,
        latency_ms: StageLatencies {
            detect: summary(|r| r.detect_ms),
            policy: summary(|r| r.policy_ms),
            sanitize: summary(|r| r.sanitize_ms),
            encode: summary(|r| r.encode_ms),
            total: summary(|r| r.total_ms),
        },
        achieved_fps: if rows.is_empty() || elapsed_secs <= 0.0 {
            0.0
        } else {
            rows.len() as f64 / elapsed_secs
        },
        audit_digest: audit.last().map_or_else(|| digest.to_string(), |r| r.digest.clone()),
        partial: false,
    }
}

pub fn write_frames_csv(path: impl AsRef<Path>, rows: &[FrameRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Io(e.into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| PipelineError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// File-based runs

/// Everything needed for a batch run over a PNG directory.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub frames_dir: PathBuf,
    pub detections: PathBuf,
    /// `None` uses the bundled taxonomy.
    pub taxonomy: Option<PathBuf>,
    pub app_id: String,
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub audit_path: PathBuf,
    pub metrics_path: PathBuf,
    pub frames_csv_path: PathBuf,
    pub fps_cap: Option<f64>,
    pub occluder: Occluder,
}

impl PipelineConfig {
    /// Defaults the audit log and metrics files to live next to `out_dir`'s
    /// frames.
    pub fn new(frames_dir: impl Into<PathBuf>, detections: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        let out_dir = out_dir.into();
        PipelineConfig {
            frames_dir: frames_dir.into(),
            detections: detections.into(),
            taxonomy: None,
            app_id: "default".into(),
            mode: Mode::VisGuardian,
            audit_path: out_dir.join("audit.jsonl"),
            metrics_path: out_dir.join("report.json"),
            frames_csv_path: out_dir.join("frames.csv"),
            out_dir,
            fps_cap: None,
            occluder: Occluder::FrozenPatch,
        }
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy, PipelineError> {
        Ok(match &self.taxonomy {
            Some(path) => Taxonomy::load(path)?,
            None => Taxonomy::bundled(),
        })
    }
}

pub fn run(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    replay(config, &[])
}

/// Batch run with a scripted interaction timeline (timestamps are frame
/// indices). Writes sanitized PNGs, the audit log, the JSON report and the
/// per-frame CSV.
pub fn replay(config: &PipelineConfig, script: &[InteractionEvent]) -> Result<RunReport, PipelineError> {
    let taxonomy = Arc::new(config.load_taxonomy()?);
    let detector = FixtureDetector::load(&config.detections, &taxonomy)?;
    let mut source = PngDirSource::open(&config.frames_dir)?;
    let store = PolicyStore::new(config.app_id.clone(), Arc::clone(&taxonomy), config.mode);
    let mut pipeline = Pipeline::new(Box::new(detector), store, config.occluder);
    validate_script(pipeline.store(), script)?;

    let mut sink = PngDirSink::create(&config.out_dir)?;
    if config.audit_path.exists() {
        fs::remove_file(&config.audit_path)?;
    }
    let mut audit = AuditLog::create(&config.audit_path)?;
    let options = DriveOptions { fps_cap: config.fps_cap };
    let outcome = match drive(&mut pipeline, &mut source, &mut sink, script, &options, Some(&mut audit)) {
        Ok(o) => o,
        Err(PipelineError::Sink { message, report }) => {
            fs::write(&config.metrics_path, serde_json::to_vec_pretty(&report).map_err(std::io::Error::from)?)?;
            return Err(PipelineError::Sink { message, report });
        }
        Err(e) => return Err(e),
    };
    fs::write(
        &config.metrics_path,
        serde_json::to_vec_pretty(&outcome.report).map_err(std::io::Error::from)?,
    )?;
    write_frames_csv(&config.frames_csv_path, &outcome.frames)?;
    Ok(outcome.report)
}
