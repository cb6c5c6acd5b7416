use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visguardian::oracle::{
    enumerate_min_interactions, min_interactions, CostModel, CostOutcome, Scene, StartState, TargetConfig,
};
use visguardian::policy::{InteractionEvent, PolicyFile, Resolution};
use visguardian::synthetic::{group_aligned_target, random_scene};
use visguardian::{Mode, PolicyStore, Taxonomy, VisibilityState};

const MODES: [Mode; 3] = [Mode::VisGuardian, Mode::ObjectBaseline, Mode::SliderBaseline];

fn replay_reaches(tax: &Arc<Taxonomy>, mode: Mode, start: &StartState, target: &TargetConfig, outcome: &CostOutcome) -> bool {
    let states = match start {
        StartState::Default => BTreeMap::new(),
        StartState::States(s) => s.clone(),
    };
    let mut store = PolicyStore::from_file(
        Arc::clone(tax),
        PolicyFile { app_id: "replay".into(), mode, slider_level: None, states, observed: Default::default() },
    );
    for event in outcome.witness() {
        store.apply(InteractionEvent::new(event.clone(), 0)).unwrap();
    }
    target.iter().all(|(c, s)| store.resolve(c) == Resolution::from(*s))
}

fn case() -> impl Strategy<Value = (Vec<String>, Vec<bool>, Vec<u8>)> {
    let classes: Vec<String> = Taxonomy::bundled().classes().into_iter().map(String::from).collect();
    proptest::sample::subsequence(classes, 1..=8).prop_flat_map(|scene| {
        let n = scene.len();
        (Just(scene), proptest::collection::vec(any::<bool>(), n), proptest::collection::vec(0u8..3, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_matches_exhaustive_enumeration((classes, start_bits, target_bits) in case()) {
        let tax = Arc::new(Taxonomy::bundled());
        let scene = Scene::new(&tax, &classes).unwrap();
        let state = |b: bool| if b { VisibilityState::Hidden } else { VisibilityState::Revealed };
        let start = StartState::States(classes.iter().cloned().zip(start_bits.into_iter().map(state)).collect());
        let target: TargetConfig = classes
            .iter()
            .zip(target_bits)
            .filter(|(_, t)| *t < 2)
            .map(|(c, t)| (c.clone(), state(t == 0)))
            .collect();

        let mut costs = BTreeMap::new();
        for mode in MODES {
            let found = min_interactions(mode, &tax, &scene, &start, &target, &CostModel::default()).unwrap();
            let limit = found.cost().unwrap_or(classes.len() as u32 * 2 + 1);
            let reference = enumerate_min_interactions(mode, Arc::clone(&tax), &scene, &start, &target, limit).unwrap();
            prop_assert_eq!(found.cost(), reference, "{:?}", mode);
            if found.cost().is_some() {
                prop_assert_eq!(found.witness().len() as u32, found.cost().unwrap());
                prop_assert!(replay_reaches(&tax, mode, &start, &target, &found));
            }
            costs.insert(format!("{mode:?}"), found.cost());
        }
        let vg = costs["VisGuardian"].unwrap();
        let ob = costs["ObjectBaseline"].unwrap();
        prop_assert!(vg <= 2 * ob);
    }
}

#[test]
fn aligned_targets_favour_group_control() {
    let tax = Taxonomy::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut le, mut lt) = (0, 0);
    for _ in 0..30 {
        let len = rng.random_range(6..=12);
        let scene_classes = random_scene(&tax, len, &mut rng);
        let groups = rng.random_range(1..=3);
        let (target, _) = group_aligned_target(&tax, &scene_classes, groups, &mut rng);
        let scene = Scene::new(&tax, &scene_classes).unwrap();
        let c = |m| min_interactions(m, &tax, &scene, &StartState::Default, &target, &CostModel::default()).unwrap().cost().unwrap();
        let (vg, ob) = (c(Mode::VisGuardian), c(Mode::ObjectBaseline));
        le += (vg <= ob) as u32;
        lt += (vg < ob) as u32;
    }
    assert_eq!(le, 30);
    assert!(lt >= 18, "strictly cheaper in {lt}/30");
}

#[test]
fn office_scene_witness_replays() {
    let tax = Arc::new(Taxonomy::bundled());
    let classes = ["badge", "ID card", "checkbook", "signed document", "file cabinet", "book", "calendar"];
    let scene = Scene::new(&tax, classes).unwrap();
    let target: TargetConfig = classes.iter().map(|c| (c.to_string(), VisibilityState::Revealed)).collect();
    let vg = min_interactions(Mode::VisGuardian, &tax, &scene, &StartState::Default, &target, &CostModel::default()).unwrap();
    assert_eq!(vg.cost(), Some(2));
    assert!(replay_reaches(&tax, Mode::VisGuardian, &StartState::Default, &target, &vg));
    assert_eq!(
        enumerate_min_interactions(Mode::VisGuardian, Arc::clone(&tax), &scene, &StartState::Default, &target, 4).unwrap(),
        Some(2)
    );
    assert_eq!(
        enumerate_min_interactions(Mode::ObjectBaseline, tax, &scene, &StartState::Default, &target, 7).unwrap(),
        Some(7)
    );
}
