//! Walks a VisGuardian policy store through a short session: objects
//! appear, the user selects one and reveals its whole spatial group, then
//! re-hides a single class. Each step prints the audit delta and digest.

use std::sync::Arc;

use visguardian::policy::{query_groups, AuditRecord};
use visguardian::{Dimension, EventKind, GroupAction, InteractionEvent, Mode, PolicyStore, Taxonomy};

fn show(step: &str, record: &AuditRecord) {
    println!("{step}");
    for change in &record.delta {
        println!("    {:<16} {:?} -> {:?}", change.class, change.old, change.new);
    }
    if record.delta.is_empty() {
        println!("    (no change)");
    }
    println!("    digest {}", &record.digest[..16]);
}

fn main() {
    let taxonomy = Arc::new(Taxonomy::bundled());
    let mut store = PolicyStore::new("desk-assistant", Arc::clone(&taxonomy), Mode::VisGuardian);

    let in_view = ["ID card", "checkbook", "file cabinet", "book", "person"];
    for event in store.observe(in_view, 0) {
        println!("new class in view: {} (default {:?})", event.class, event.default_state);
    }

    let groups = query_groups(&taxonomy, "ID card").expect("bundled class");
    println!("\nselected ID card; its office group is {:?}\n", groups.spatial_group);

    let script = [
        EventKind::SelectObject { track_id: 1, class: "ID card".into() },
        EventKind::ApplyGroup { anchor: "ID card".into(), dimension: Dimension::Spatial, action: GroupAction::Reveal },
        EventKind::SelectObject { track_id: 2, class: "checkbook".into() },
        EventKind::ToggleClass { class: "checkbook".into() },
    ];
    for (t, kind) in script.into_iter().enumerate() {
        let label = format!("{kind:?}");
        let record = store.apply(InteractionEvent::new(kind, t as u64)).expect("valid in this mode");
        show(&label, &record);
    }

    println!("\nfinal states of classes in view:");
    for class in in_view {
        println!("    {:<16} {:?}", class, store.resolve(class));
    }
    println!("\npersisted form:\n{}", serde_json::to_string_pretty(&store.to_file()).unwrap());

    let err = store
        .apply(InteractionEvent::new(EventKind::SetSlider { level: 2 }, 9))
        .unwrap_err();
    println!("\nslider events are rejected here: {err}");
}
