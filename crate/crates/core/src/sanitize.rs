//! Pixel-level enforcement: hidden objects are covered with a patch frozen
//! from the first frame in which they were hidden.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{BBox, Detection};
use crate::policy::{PolicyView, Resolution};

pub const FILL_GRAY: [u8; 3] = [128, 128, 128];
pub const HIDDEN_OUTLINE: [u8; 3] = [255, 0, 0];
pub const REVEALED_OUTLINE: [u8; 3] = [0, 255, 0];
pub const HIGHLIGHT_OUTLINE: [u8; 3] = [255, 255, 0];
pub const OUTLINE_WIDTH: u32 = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SanitizeError {
    #[error("bounding box lies entirely outside the frame")]
    EmptyAfterClamp,
    #[error("frame buffer is {actual} bytes, expected {expected}")]
    BadBuffer { expected: usize, actual: usize },
    #[error("frame dimensions must be at least 1x1")]
    EmptyFrame,
}

/// Row-major 8-bit RGB image.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Frame, SanitizeError> {
        if width == 0 || height == 0 {
            return Err(SanitizeError::EmptyFrame);
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(SanitizeError::BadBuffer {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Frame { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Frame {
        assert!(width > 0 && height > 0, "frame dimensions must be non-zero");
        let pixels = rgb.repeat(width as usize * height as usize);
        Frame { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Copies out the pixels of a region that lies inside the frame.
    pub fn region(&self, r: &BBox) -> Vec<u8> {
        let row = r.w as usize * 3;
        let mut out = Vec::with_capacity(row * r.h as usize);
        for y in r.y..r.y + r.h {
            let o = self.offset(r.x, y);
            out.extend_from_slice(&self.pixels[o..o + row]);
        }
        out
    }

    fn fill_rect(&mut self, r: &BBox, rgb: [u8; 3]) {
        for y in r.y..r.y + r.h {
            let o = self.offset(r.x, y);
            for px in self.pixels[o..o + r.w as usize * 3].chunks_exact_mut(3) {
                px.copy_from_slice(&rgb);
            }
        }
    }
}

/// Intersects `bbox` with a `width` x `height` frame.
pub fn clamp(bbox: &BBox, width: u32, height: u32) -> Result<BBox, SanitizeError> {
    if bbox.x >= width || bbox.y >= height {
        return Err(SanitizeError::EmptyAfterClamp);
    }
    let right = bbox.right().min(width as u64) as u32;
    let bottom = bbox.bottom().min(height as u64) as u32;
    Ok(BBox {
        x: bbox.x,
        y: bbox.y,
        w: right - bbox.x,
        h: bottom - bbox.y,
    })
}

/// Frozen appearance of one track.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub track_id: u32,
    /// Clamped region the pixels were copied from.
    pub captured_bbox: BBox,
    pub pixels: Vec<u8>,
    pub captured_frame_index: u64,
}

impl Patch {
    /// Scales the patch onto `dst` (inside `frame`) with nearest-neighbour
    /// sampling.
    fn draw(&self, frame: &mut Frame, dst: &BBox) {
        let (pw, ph) = (self.captured_bbox.w as u64, self.captured_bbox.h as u64);
        let src_cols: Vec<usize> = (0..dst.w as u64)
            .map(|dx| (dx * pw / dst.w as u64) as usize * 3)
            .collect();
        for dy in 0..dst.h {
            let sy = (dy as u64 * ph / dst.h as u64) as usize;
            let src_row = &self.pixels[sy * pw as usize * 3..(sy + 1) * pw as usize * 3];
            let o = frame.offset(dst.x, dst.y + dy);
            let dst_row = &mut frame.pixels[o..o + dst.w as usize * 3];
            for (px, &sx) in dst_row.chunks_exact_mut(3).zip(&src_cols) {
                px.copy_from_slice(&src_row[sx..sx + 3]);
            }
        }
    }
}

pub fn capture_patch(
    frame: &Frame,
    bbox: &BBox,
    track_id: u32,
    frame_index: u64,
) -> Result<Patch, SanitizeError> {
    let region = clamp(bbox, frame.width, frame.height)?;
    Ok(Patch {
        track_id,
        captured_bbox: region,
        pixels: frame.region(&region),
        captured_frame_index: frame_index,
    })
}

/// Frozen patches keyed by track id. A patch is never replaced once
/// captured, so a track that is revealed and hidden again reuses it.
#[derive(Debug, Clone, Default)]
pub struct PatchCache {
    patches: HashMap<u32, Patch>,
}

impl PatchCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, track_id: u32) -> Option<&Patch> {
        self.patches.get(&track_id)
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn clear(&mut self) {
        self.patches.clear();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Occluder {
    /// Patch frozen at first hiding, rescaled to the moving box.
    #[default]
    FrozenPatch,
    /// Uniform [`FILL_GRAY`].
    SolidFill,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SanitizeAction {
    Occluded,
    PassedThrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub track_id: Option<u32>,
    pub action: SanitizeAction,
    /// Set when a hidden detection could not be drawn because its box lies
    /// outside the frame.
    pub clamped_out: bool,
}

#[derive(Debug, Clone)]
pub struct Sanitized {
    pub frame: Frame,
    pub actions: Vec<ActionRecord>,
}

/// Occludes every detection that `view` resolves `Hidden`.
///
/// Patches for tracks without a cached one are captured from `frame` (the
/// input) before anything is drawn. Pixels outside hidden boxes are copied
/// through unchanged. Hidden detections without a track id cannot be frozen
/// and get a solid fill.
pub fn sanitize_frame(
    frame: &Frame,
    detections: &[Detection],
    view: &PolicyView,
    cache: &mut PatchCache,
    occluder: Occluder,
) -> Sanitized {
    let mut out = frame.clone();
    let mut actions = Vec::with_capacity(detections.len());
    for det in detections {
        let passed = |clamped_out| ActionRecord {
            track_id: det.track_id,
            action: SanitizeAction::PassedThrough,
            clamped_out,
        };
        if view.resolve_label(&det.class) != Resolution::Hidden {
            actions.push(passed(false));
            continue;
        }
        let Ok(region) = clamp(&det.bbox, frame.width, frame.height) else {
            actions.push(passed(true));
            continue;
        };
        match (occluder, det.track_id) {
            (Occluder::FrozenPatch, Some(track)) => {
                let patch = cache.patches.entry(track).or_insert_with(|| Patch {
                    track_id: track,
                    captured_bbox: region,
                    pixels: frame.region(&region),
                    captured_frame_index: det.frame_index,
                });
                patch.draw(&mut out, &region);
            }
            _ => out.fill_rect(&region, FILL_GRAY),
        }
        actions.push(ActionRecord {
            track_id: det.track_id,
            action: SanitizeAction::Occluded,
            clamped_out: false,
        });
    }
    Sanitized { frame: out, actions }
}

/// The object the user picked, plus the classes of the group being
/// previewed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub track_id: Option<u32>,
    pub group: BTreeSet<String>,
}

/// Draws box outlines over an already-sanitized frame: red for hidden,
/// green for revealed, yellow for the selection and its group. Outlines sit
/// on the inner [`OUTLINE_WIDTH`] pixels of the clamped box; non-sensitive
/// detections are not outlined.
pub fn render_overlay(
    sanitized: &Frame,
    detections: &[Detection],
    view: &PolicyView,
    selection: Option<&Selection>,
) -> Frame {
    let mut out = sanitized.clone();
    for det in detections {
        let resolution = view.resolve_label(&det.class);
        if resolution == Resolution::NotSensitive {
            continue;
        }
        let Ok(r) = clamp(&det.bbox, out.width, out.height) else {
            continue;
        };
        let highlighted = selection.is_some_and(|s| {
            (s.track_id.is_some() && s.track_id == det.track_id)
                || det.class.sensitive().is_some_and(|c| s.group.contains(c))
        });
        let color = if highlighted {
            HIGHLIGHT_OUTLINE
        } else if resolution == Resolution::Hidden {
            HIDDEN_OUTLINE
        } else {
            REVEALED_OUTLINE
        };
        draw_outline(&mut out, &r, color);
    }
    out
}

fn draw_outline(frame: &mut Frame, r: &BBox, color: [u8; 3]) {
    let t = OUTLINE_WIDTH;
    let bands = [
        BBox { x: r.x, y: r.y, w: r.w, h: t.min(r.h) },
        BBox { x: r.x, y: r.y + r.h.saturating_sub(t), w: r.w, h: t.min(r.h) },
        BBox { x: r.x, y: r.y, w: t.min(r.w), h: r.h },
        BBox { x: r.x + r.w.saturating_sub(t), y: r.y, w: t.min(r.w), h: r.h },
    ];
    for band in &bands {
        frame.fill_rect(band, color);
    }
}

/// Whether pixel (x, y) lies on the outline drawn for clamped box `r`.
pub fn on_outline(r: &BBox, x: u32, y: u32) -> bool {
    r.contains(x, y)
        && (x < r.x + OUTLINE_WIDTH
            || y < r.y + OUTLINE_WIDTH
            || x >= (r.x + r.w).saturating_sub(OUTLINE_WIDTH)
            || y >= (r.y + r.h).saturating_sub(OUTLINE_WIDTH))
}
