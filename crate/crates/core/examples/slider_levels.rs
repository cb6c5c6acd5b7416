//! Shows what each slider position hides, and the store it produces.

use std::sync::Arc;

use visguardian::policy::{Resolution, SliderLevel};
use visguardian::{EventKind, InteractionEvent, Mode, PolicyStore, Taxonomy};

fn main() {
    let taxonomy = Arc::new(Taxonomy::bundled());
    let mut store = PolicyStore::new("slider-demo", Arc::clone(&taxonomy), Mode::SliderBaseline);
    println!("fresh store sits at level {}", store.slider_level().map_or(0, |l| l.get()));

    for level in SliderLevel::all() {
        store
            .apply(InteractionEvent::new(EventKind::SetSlider { level: level.get() }, 0))
            .expect("slider mode");
        let hidden: Vec<&str> = taxonomy
            .classes()
            .into_iter()
            .filter(|c| store.resolve(c) == Resolution::Hidden)
            .collect();
        println!("\nlevel {} hides {} of {} classes", level.get(), hidden.len(), taxonomy.len());
        println!("  table row: {}", level.hidden_set().join(", "));
        println!("  digest:    {}", store.digest());
    }
}
