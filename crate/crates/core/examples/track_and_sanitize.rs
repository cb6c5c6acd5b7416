//! Generates a short synthetic stream, tracks and sanitizes it, and writes
//! both the sanitized frames and overlay renderings as PNGs.
//!
//! ```text
//! cargo run -p visguardian --example track_and_sanitize -- /tmp/vg-demo
//! ```

use std::env;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use visguardian::detect::Tracker;
use visguardian::pipeline::{encode_png, frame_file_name};
use visguardian::sanitize::{render_overlay, sanitize_frame, Selection};
use visguardian::synthetic::{SyntheticConfig, SyntheticStream};
use visguardian::{
    Dimension, EventKind, GroupAction, InteractionEvent, Mode, Occluder, PatchCache, PolicyStore, Taxonomy,
};

fn main() -> std::io::Result<()> {
    let out = PathBuf::from(env::args().nth(1).unwrap_or_else(|| "target/track_and_sanitize".into()));
    fs::create_dir_all(out.join("sanitized"))?;
    fs::create_dir_all(out.join("overlay"))?;

    let taxonomy = Arc::new(Taxonomy::bundled());
    let mut config = SyntheticConfig::new(&taxonomy, 320, 240, 6, 24);
    config.labels = ["person", "cell phone", "underwear", "swimsuit", "book", "doorknob"]
        .map(String::from)
        .to_vec();
    let stream = SyntheticStream::generate(&taxonomy, &config);

    let mut store = PolicyStore::new("demo", Arc::clone(&taxonomy), Mode::VisGuardian);
    let mut tracker = Tracker::new();
    let mut cache = PatchCache::new();

    for index in 0..stream.frame_count() {
        if index == 12 {
            // halfway through, reveal every clothing item
            let event = EventKind::ApplyGroup {
                anchor: "underwear".into(),
                dimension: Dimension::Category,
                action: GroupAction::Reveal,
            };
            store.apply(InteractionEvent::new(event, index)).expect("valid");
        }
        let detections = tracker.update(stream.detections(index).to_vec());
        store.observe(detections.iter().filter_map(|d| d.class.sensitive()), index);
        let view = store.snapshot();
        let frame = stream.frame(index);
        let sanitized = sanitize_frame(&frame, &detections, &view, &mut cache, Occluder::FrozenPatch);

        let selection = Selection {
            track_id: detections.first().and_then(|d| d.track_id),
            group: Default::default(),
        };
        let overlay = render_overlay(&sanitized.frame, &detections, &view, Some(&selection));
        fs::write(out.join("sanitized").join(frame_file_name(index)), encode_png(&sanitized.frame).unwrap())?;
        fs::write(out.join("overlay").join(frame_file_name(index)), encode_png(&overlay).unwrap())?;

        let occluded = sanitized.actions.iter().filter(|a| a.action == visguardian::sanitize::SanitizeAction::Occluded).count();
        println!("frame {index:>2}: {} boxes, {occluded} occluded, digest {}", detections.len(), &view.digest()[..12]);
    }
    println!("frozen patches cached: {}", cache.len());
    println!("wrote {}", out.display());
    Ok(())
}
