//! Per-frame detections: bounding boxes, the fixture-backed detector, and a
//! greedy IoU tracker that keeps track ids stable across frames.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Taxonomy;

/// Minimum IoU for a current box to inherit a previous track id.
pub const TRACK_IOU_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("fixture line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("failed to read fixture {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid bounding box: width and height must be at least 1")]
    InvalidBox,
}

/// Axis-aligned box in frame pixels. May extend past the frame edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<BBox, DetectError> {
        if w == 0 || h == 0 {
            return Err(DetectError::InvalidBox);
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && (px as u64) < self.right() && (py as u64) < self.bottom()
    }

    fn intersection_area(&self, other: &BBox) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = DetectError;

    fn try_from([x, y, w, h]: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(x, y, w, h)
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Class of a detection after canonicalization.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name")]
pub enum ClassLabel {
    /// A canonical taxonomy class.
    Sensitive(String),
    /// A detector label with no taxonomy mapping, kept verbatim.
    Unknown(String),
}

impl ClassLabel {
    pub fn canonicalized(taxonomy: &Taxonomy, label: &str) -> ClassLabel {
        match taxonomy.canonicalize(label) {
            Some(class) => ClassLabel::Sensitive(class.to_string()),
            None => ClassLabel::Unknown(label.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ClassLabel::Sensitive(s) | ClassLabel::Unknown(s) => s,
        }
    }

    pub fn sensitive(&self) -> Option<&str> {
        match self {
            ClassLabel::Sensitive(s) => Some(s),
            ClassLabel::Unknown(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u64,
    pub class: ClassLabel,
    pub bbox: BBox,
    pub confidence: f32,
    pub track_id: Option<u32>,
}

/// Source of detections for a frame index. Implementations must be
/// deterministic in `frame_index`.
pub trait Detector: Send + Sync {
    fn detect(&self, frame_index: u64) -> Vec<Detection>;
}

#[derive(Deserialize)]
struct FixtureLine {
    frame: u64,
    #[serde(default)]
    detections: Vec<FixtureDetection>,
}

#[derive(Deserialize)]
struct FixtureDetection {
    class: String,
    bbox: [u32; 4],
    conf: f32,
    #[serde(default)]
    track: Option<u32>,
}

/// Detector replaying a JSON Lines fixture, one object per frame.
///
/// Frames missing from the file yield no detections.
#[derive(Debug, Clone, Default)]
pub struct FixtureDetector {
    frames: BTreeMap<u64, Vec<Detection>>,
}

impl FixtureDetector {
    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, DetectError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DetectError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(BufReader::new(file), taxonomy)
    }

    pub fn from_jsonl(text: &str, taxonomy: &Taxonomy) -> Result<Self, DetectError> {
        Self::from_reader(text.as_bytes(), taxonomy)
    }

    pub fn from_reader(reader: impl BufRead, taxonomy: &Taxonomy) -> Result<Self, DetectError> {
        let mut frames = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let lineno = n + 1;
            let err = |message: String| DetectError::Parse { line: lineno, message };
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let mut dets = Vec::with_capacity(parsed.detections.len());
            for d in parsed.detections {
                if !(0.0..=1.0).contains(&d.conf) {
                    return Err(err(format!("confidence {} outside [0, 1]", d.conf)));
                }
                let [x, y, w, h] = d.bbox;
                let bbox = BBox::new(x, y, w, h).map_err(|e| err(e.to_string()))?;
                dets.push(Detection {
                    frame_index: parsed.frame,
                    class: ClassLabel::canonicalized(taxonomy, &d.class),
                    bbox,
                    confidence: d.conf,
                    track_id: d.track,
                });
            }
            if frames.insert(parsed.frame, dets).is_some() {
                return Err(err(format!("frame {} listed twice", parsed.frame)));
            }
        }
        Ok(FixtureDetector { frames })
    }

    pub fn from_frames(frames: BTreeMap<u64, Vec<Detection>>) -> Self {
        FixtureDetector { frames }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

impl Detector for FixtureDetector {
    fn detect(&self, frame_index: u64) -> Vec<Detection> {
        self.frames.get(&frame_index).cloned().unwrap_or_default()
    }
}

/// Greedy same-class association of `current` against `previous`.
///
/// Candidate pairs with IoU at or above [`TRACK_IOU_THRESHOLD`] are taken in
/// descending IoU order (ties broken by current index, then previous index);
/// each previous track is used at most once. Unmatched detections receive
/// fresh ids from `next_id` in input order.
pub fn assign_tracks(previous: &[Detection], current: &[Detection], next_id: &mut u32) -> Vec<Detection> {
    let mut candidates = Vec::new();
    for (ci, cur) in current.iter().enumerate() {
        for (pi, prev) in previous.iter().enumerate() {
            if prev.track_id.is_none() || prev.class != cur.class {
                continue;
            }
            let overlap = iou(&prev.bbox, &cur.bbox);
            if overlap >= TRACK_IOU_THRESHOLD {
                candidates.push((overlap, ci, pi));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut assigned: Vec<Option<u32>> = vec![None; current.len()];
    let mut used = vec![false; previous.len()];
    for (_, ci, pi) in candidates {
        if assigned[ci].is_none() && !used[pi] {
            assigned[ci] = previous[pi].track_id;
            used[pi] = true;
        }
    }

    current
        .iter()
        .zip(assigned)
        .map(|(det, id)| {
            let id = id.unwrap_or_else(|| {
                let fresh = *next_id;
                *next_id += 1;
                fresh
            });
            Detection {
                track_id: Some(id),
                ..det.clone()
            }
        })
        .collect()
}

/// Stateful wrapper over [`assign_tracks`], owned by one pipeline thread.
#[derive(Debug, Clone)]
pub struct Tracker {
    previous: Vec<Detection>,
    next_id: u32,
}

impl Default for Tracker {
    fn default() -> Self {
        Tracker {
            previous: Vec::new(),
            next_id: 1,
        }
    }
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assigns track ids to one frame's detections. Frames whose detections
    /// all carry a recorded track id pass through unchanged.
    pub fn update(&mut self, current: Vec<Detection>) -> Vec<Detection> {
        let tracked = if !current.is_empty() && current.iter().all(|d| d.track_id.is_some()) {
            let max = current.iter().filter_map(|d| d.track_id).max().unwrap_or(0);
            self.next_id = self.next_id.max(max + 1);
            current
        } else {
            assign_tracks(&self.previous, &current, &mut self.next_id)
        };
        self.previous = tracked.clone();
        tracked
    }

    pub fn reset(&mut self) {
        *self = Tracker::default();
    }
}
