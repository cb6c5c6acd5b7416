//! Deterministic synthetic streams: textured frames plus drifting boxes.
//!
//! Used for throughput measurement, examples and tests where no recorded
//! footage is available.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::detect::{BBox, ClassLabel, Detection, FixtureDetector};
use crate::oracle::TargetConfig;
use crate::pipeline::{
    drive, encode_png, frame_file_name, DriveOptions, EncodeOnlySink, FrameSource, Pipeline, PipelineError, RunReport,
};
use crate::policy::{Mode, PolicyStore, VisibilityState};
use crate::sanitize::{Frame, Occluder};
use crate::taxonomy::{Dimension, GroupKey, Taxonomy};

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub width: u32,
    pub height: u32,
    pub boxes: usize,
    pub frames: u64,
    pub seed: u64,
    /// Labels cycled over the boxes; raw detector strings, so aliases and
    /// non-sensitive labels are allowed.
    pub labels: Vec<String>,
    /// Maximum per-frame displacement in pixels.
    pub max_speed: i32,
}

impl SyntheticConfig {
    /// All taxonomy classes, `boxes` boxes, at the given resolution.
    pub fn new(taxonomy: &Taxonomy, width: u32, height: u32, boxes: usize, frames: u64) -> Self {
        SyntheticConfig {
            width,
            height,
            boxes,
            frames,
            seed: 7,
            labels: taxonomy.classes().into_iter().map(String::from).collect(),
            max_speed: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    x: i32,
    y: i32,
    w: u32,
    h: u32,
    dx: i32,
    dy: i32,
}

/// A fully generated stream.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    width: u32,
    height: u32,
    seed: u64,
    detections: BTreeMap<u64, Vec<Detection>>,
    raw_labels: Vec<String>,
}

impl SyntheticStream {
    pub fn generate(taxonomy: &Taxonomy, config: &SyntheticConfig) -> Self {
        assert!(config.width >= 8 && config.height >= 8, "frame too small");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let max_w = (config.width / 4).max(4);
        let max_h = (config.height / 4).max(4);
        let mut movers: Vec<Mover> = (0..config.boxes)
            .map(|_| {
                let w = rng.random_range(max_w / 4..=max_w);
                let h = rng.random_range(max_h / 4..=max_h);
                Mover {
                    x: rng.random_range(0..=(config.width - w) as i32),
                    y: rng.random_range(0..=(config.height - h) as i32),
                    w,
                    h,
                    dx: rng.random_range(-config.max_speed..=config.max_speed),
                    dy: rng.random_range(-config.max_speed..=config.max_speed),
                }
            })
            .collect();
        let raw_labels: Vec<String> = (0..config.boxes)
            .map(|i| config.labels.get(i % config.labels.len().max(1)).cloned().unwrap_or_default())
            .collect();
        let confidences: Vec<f32> = (0..config.boxes).map(|_| rng.random_range(0.5..=1.0)).collect();

        let mut detections = BTreeMap::new();
        for frame in 0..config.frames {
            let dets = movers
                .iter()
                .zip(&raw_labels)
                .zip(&confidences)
                .map(|((m, label), conf)| Detection {
                    frame_index: frame,
                    class: ClassLabel::canonicalized(taxonomy, label),
                    bbox: BBox { x: m.x as u32, y: m.y as u32, w: m.w, h: m.h },
                    confidence: *conf,
                    track_id: None,
                })
                .collect();
            detections.insert(frame, dets);
            for m in &mut movers {
                step(m, config.width, config.height);
            }
        }
        SyntheticStream {
            width: config.width,
            height: config.height,
            seed: config.seed,
            detections,
            raw_labels,
        }
    }

    pub fn frame_count(&self) -> u64 {
        self.detections.len() as u64
    }

    pub fn detections(&self, frame: u64) -> &[Detection] {
        self.detections.get(&frame).map_or(&[], Vec::as_slice)
    }

    pub fn detector(&self) -> FixtureDetector {
        FixtureDetector::from_frames(self.detections.clone())
    }

    pub fn frame(&self, index: u64) -> Frame {
        textured_frame(self.width, self.height, self.seed.wrapping_add(index))
    }

    /// Source yielding every frame once, rendering on demand.
    pub fn source(&self) -> SyntheticSource {
        SyntheticSource {
            textures: Vec::new(),
            stream: Some(self.clone()),
            next: 0,
            end: self.frame_count(),
        }
    }

    /// Source that cycles `distinct` pre-rendered textures, for throughput
    /// runs where frame generation must not dominate.
    pub fn cycling_source(&self, distinct: usize) -> SyntheticSource {
        let textures = (0..distinct.max(1) as u64).map(|i| self.frame(i)).collect();
        SyntheticSource {
            textures,
            stream: None,
            next: 0,
            end: self.frame_count(),
        }
    }

    /// Detection fixture in the JSON-lines format read by
    /// [`FixtureDetector`], with the original raw labels.
    pub fn fixture_jsonl(&self) -> String {
        let mut out = String::new();
        for (frame, dets) in &self.detections {
            let dets: Vec<_> = dets
                .iter()
                .zip(&self.raw_labels)
                .map(|(d, label)| {
                    serde_json::json!({
                        "class": label,
                        "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                        "conf": d.confidence,
                    })
                })
                .collect();
            out.push_str(&serde_json::json!({ "frame": frame, "detections": dets }).to_string());
            out.push('\n');
        }
        out
    }

    /// Writes `frames/NNNNNN.png` and `detections.jsonl` under `dir`.
    pub fn write_fixture(&self, dir: impl AsRef<Path>) -> io::Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir)?;
        for index in 0..self.frame_count() {
            let png = encode_png(&self.frame(index)).map_err(io::Error::other)?;
            fs::write(frames_dir.join(frame_file_name(index)), png)?;
        }
        let det_path = dir.join("detections.jsonl");
        fs::File::create(&det_path)?.write_all(self.fixture_jsonl().as_bytes())?;
        Ok((frames_dir, det_path))
    }
}

fn step(m: &mut Mover, width: u32, height: u32) {
    let max_x = (width - m.w) as i32;
    let max_y = (height - m.h) as i32;
    m.x += m.dx;
    m.y += m.dy;
    if m.x < 0 || m.x > max_x {
        m.dx = -m.dx;
        m.x = m.x.clamp(0, max_x);
    }
    if m.y < 0 || m.y > max_y {
        m.dy = -m.dy;
        m.y = m.y.clamp(0, max_y);
    }
}

/// Smooth colour gradient with a seed-dependent phase.
pub fn textured_frame(width: u32, height: u32, seed: u64) -> Frame {
    let phase = (seed % 256) as u32;
    let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height {
        for x in 0..width {
            pixels.push(((x + phase) & 0xff) as u8);
            pixels.push(((y + 2 * phase) & 0xff) as u8);
            pixels.push((((x ^ y) + 3 * phase) & 0xff) as u8);
        }
    }
    Frame::new(width, height, pixels).expect("buffer sized from dimensions")
}

pub struct SyntheticSource {
    textures: Vec<Frame>,
    stream: Option<SyntheticStream>,
    next: u64,
    end: u64,
}

impl FrameSource for SyntheticSource {
    fn next_frame(&mut self) -> Option<Result<(u64, Frame), PipelineError>> {
        if self.next >= self.end {
            return None;
        }
        let index = self.next;
        self.next += 1;
        let frame = match &self.stream {
            Some(stream) => stream.frame(index),
            None => self.textures[index as usize % self.textures.len()].clone(),
        };
        Some(Ok((index, frame)))
    }
}

/// Uncapped throughput run over a synthetic stream.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub width: u32,
    pub height: u32,
    pub boxes: usize,
    pub frames: u64,
    pub mode: Mode,
    pub occluder: Occluder,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            width: 1280,
            height: 720,
            boxes: 32,
            frames: 300,
            mode: Mode::VisGuardian,
            occluder: Occluder::FrozenPatch,
            seed: 7,
        }
    }
}

/// Runs the full pipeline (PNG encode included, nothing written to disk)
/// under the default-deny policy, so every box is occluded.
pub fn run_bench(taxonomy: Arc<Taxonomy>, config: &BenchConfig) -> Result<RunReport, PipelineError> {
    let mut synth = SyntheticConfig::new(&taxonomy, config.width, config.height, config.boxes, config.frames);
    synth.seed = config.seed;
    let stream = SyntheticStream::generate(&taxonomy, &synth);
    let store = PolicyStore::new("bench", Arc::clone(&taxonomy), config.mode);
    let mut pipeline = Pipeline::new(Box::new(stream.detector()), store, config.occluder);
    let mut source = stream.cycling_source(4);
    let mut sink = EncodeOnlySink::default();
    let outcome = drive(&mut pipeline, &mut source, &mut sink, &[], &DriveOptions::default(), None)?;
    Ok(outcome.report)
}

/// `len` distinct taxonomy classes, sorted.
pub fn random_scene<R: Rng + ?Sized>(taxonomy: &Taxonomy, len: usize, rng: &mut R) -> Vec<String> {
    let classes = taxonomy.classes();
    let mut scene: Vec<String> = classes
        .choose_multiple(rng, len.min(classes.len()))
        .map(|c| c.to_string())
        .collect();
    scene.sort();
    scene
}

/// Full target over `scene` that reveals the union of up to `groups`
/// taxonomy groups and keeps everything else hidden. A group is only taken
/// if it adds at least two scene classes not yet revealed.
pub fn group_aligned_target<R: Rng + ?Sized>(
    taxonomy: &Taxonomy,
    scene: &[String],
    groups: usize,
    rng: &mut R,
) -> (TargetConfig, Vec<GroupKey>) {
    let mut keys: Vec<GroupKey> = Dimension::ALL.iter().flat_map(|d| GroupKey::all_in(*d)).collect();
    keys.shuffle(rng);
    let mut revealed: Vec<&String> = Vec::new();
    let mut chosen = Vec::new();
    for key in keys {
        if chosen.len() == groups {
            break;
        }
        let fresh: Vec<&String> = scene
            .iter()
            .filter(|c| taxonomy.get(c).is_some_and(|e| e.in_group(key)) && !revealed.contains(c))
            .collect();
        if fresh.len() >= 2 {
            revealed.extend(fresh);
            chosen.push(key);
        }
    }
    let target = scene
        .iter()
        .map(|c| {
            let state = if revealed.contains(&c) { VisibilityState::Revealed } else { VisibilityState::Hidden };
            (c.clone(), state)
        })
        .collect();
    (target, chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Tracker;

    #[test]
    fn aligned_targets_reveal_whole_groups() {
        let t = Taxonomy::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let len = rng.random_range(6..=12);
            let scene = random_scene(&t, len, &mut rng);
            assert_eq!(scene.len(), len);
            let (target, keys) = group_aligned_target(&t, &scene, 2, &mut rng);
            assert!(!keys.is_empty() && keys.len() <= 2);
            assert_eq!(target.len(), len);
            for (class, state) in &target {
                let in_any = keys.iter().any(|k| t.get(class).unwrap().in_group(*k));
                assert_eq!(*state == VisibilityState::Revealed, in_any);
            }
        }
    }

    #[test]
    fn deterministic_and_in_bounds() {
        let t = Taxonomy::bundled();
        let cfg = SyntheticConfig::new(&t, 320, 240, 12, 20);
        let a = SyntheticStream::generate(&t, &cfg);
        let b = SyntheticStream::generate(&t, &cfg);
        assert_eq!(a.fixture_jsonl(), b.fixture_jsonl());
        for f in 0..20 {
            for d in a.detections(f) {
                assert!(d.bbox.right() <= 320 && d.bbox.bottom() <= 240);
            }
        }
        assert_eq!(a.frame(3), b.frame(3));
        assert_ne!(a.frame(3), a.frame(4));
    }

    #[test]
    fn fixture_round_trips() {
        let t = Taxonomy::bundled();
        let mut cfg = SyntheticConfig::new(&t, 160, 120, 4, 5);
        cfg.labels = vec!["cellphone".into(), "doorknob".into()];
        let s = SyntheticStream::generate(&t, &cfg);
        let parsed = FixtureDetector::from_jsonl(&s.fixture_jsonl(), &t).unwrap();
        assert_eq!(parsed.frame_count(), 5);
        let d = crate::detect::Detector::detect(&parsed, 2);
        assert_eq!(d, s.detections(2));
        assert_eq!(d[0].class, ClassLabel::Sensitive("mobile phone".into()));
        assert_eq!(d[1].class, ClassLabel::Unknown("doorknob".into()));
    }

    #[test]
    fn slow_boxes_keep_their_tracks() {
        let t = Taxonomy::bundled();
        let cfg = SyntheticConfig::new(&t, 640, 480, 8, 30);
        let s = SyntheticStream::generate(&t, &cfg);
        let mut tracker = Tracker::new();
        let first: Vec<_> = tracker.update(s.detections(0).to_vec()).iter().map(|d| d.track_id).collect();
        let mut last = first.clone();
        for f in 1..30 {
            last = tracker.update(s.detections(f).to_vec()).iter().map(|d| d.track_id).collect();
        }
        assert_eq!(first.len(), last.len());
        assert!(last.iter().all(Option::is_some));
    }

    #[test]
    fn small_bench_reports_every_frame() {
        let t = Arc::new(Taxonomy::bundled());
        let cfg = BenchConfig { width: 64, height: 48, boxes: 4, frames: 10, ..BenchConfig::default() };
        let r = run_bench(t, &cfg).unwrap();
        assert_eq!(r.frames_processed, 10);
        assert!(r.achieved_fps > 0.0);
        assert_eq!(r.new_class_events, 4);
    }

    #[test]
    fn sources_yield_every_index() {
        let t = Taxonomy::bundled();
        let s = SyntheticStream::generate(&t, &SyntheticConfig::new(&t, 32, 32, 2, 6));
        for mut src in [s.source(), s.cycling_source(2)] {
            let idx: Vec<u64> = std::iter::from_fn(|| src.next_frame()).map(|r| r.unwrap().0).collect();
            assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        }
    }
}
