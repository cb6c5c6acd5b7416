//! Minimal interaction counts per control technique.
//!
//! Without arguments, evaluates the office desk scene and a batch of random
//! group-aligned scenes. With a path, evaluates that scenario file:
//!
//! ```json
//! {"scene": ["book", "person"], "start": "default",
//!  "target": {"book": "Revealed"}, "techniques": ["VisGuardian", "ObjectBaseline"]}
//! ```

use std::env;
use std::fs;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visguardian::oracle::{comparison_table, min_interactions, CostModel, Scenario, Scene, StartState};
use visguardian::synthetic::{group_aligned_target, random_scene};
use visguardian::{Mode, Taxonomy};

const OFFICE: &str = r#"{
  "scene": ["badge", "ID card", "checkbook", "signed document", "file cabinet", "book", "calendar"],
  "start": "default",
  "target": {"badge": "Revealed", "ID card": "Revealed", "checkbook": "Revealed",
             "signed document": "Revealed", "file cabinet": "Revealed", "book": "Revealed",
             "calendar": "Revealed"}
}"#;

fn main() -> ExitCode {
    let taxonomy = Taxonomy::bundled();
    let text = match env::args().nth(1) {
        Some(path) => fs::read_to_string(path).expect("readable scenario"),
        None => OFFICE.to_string(),
    };
    let rows = match Scenario::from_json(&text).and_then(|s| s.evaluate(&taxonomy)) {
        Ok(rows) => rows,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    print!("{}", comparison_table(&rows));

    if env::args().nth(1).is_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut le, mut lt, n) = (0, 0, 20);
        println!("\nrandom group-aligned scenes:");
        for _ in 0..n {
            let len = rng.random_range(6..=12);
            let classes = random_scene(&taxonomy, len, &mut rng);
            let groups = rng.random_range(1..=3);
            let (target, keys) = group_aligned_target(&taxonomy, &classes, groups, &mut rng);
            let scene = Scene::new(&taxonomy, &classes).unwrap();
            let cost = |m| {
                min_interactions(m, &taxonomy, &scene, &StartState::Default, &target, &CostModel::default())
                    .unwrap()
                    .cost()
            };
            let (vg, ob) = (cost(Mode::VisGuardian).unwrap(), cost(Mode::ObjectBaseline).unwrap());
            let slider = cost(Mode::SliderBaseline).map_or("-".to_string(), |c| c.to_string());
            le += (vg <= ob) as u32;
            lt += (vg < ob) as u32;
            println!("  {len:>2} classes, reveal {keys:?}: group {vg}, per-object {ob}, slider {slider}");
        }
        println!("group control no worse in {le}/{n}, strictly cheaper in {lt}/{n}");
    }
    ExitCode::SUCCESS
}
