//! Minimal interaction cost to reach a target visibility configuration
//! under each control technique.
//!
//! States are bitmasks over the scene's classes (bit set = `Hidden`). For
//! group-based control the state also carries the currently selected
//! object, because `ToggleClass` and `ApplyGroup` act on the selection.
//! The search is uniform-cost over whole events, so with the default unit
//! costs it is plain breadth-first search and the returned witness is the
//! least sequence, under the derived `EventKind` order, among all minimal
//! ones.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    EventKind, GroupAction, InteractionEvent, Mode, PolicyFile, PolicyStore, Resolution, SliderLevel,
    VisibilityState,
};
use crate::taxonomy::{Dimension, Taxonomy};

/// Scenes larger than this cannot be encoded in the state bitmask.
pub const MAX_SCENE: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("class `{0}` is not in the taxonomy")]
    UnknownClass(String),
    #[error("target class `{0}` is not part of the scene")]
    TargetOutsideScene(String),
    #[error("scene has {0} classes; at most {MAX_SCENE} are supported")]
    SceneTooLarge(usize),
    #[error("event costs must be positive")]
    ZeroCost,
    #[error("unknown technique `{0}`")]
    UnknownTechnique(String),
    #[error("malformed scenario: {0}")]
    Scenario(String),
}

/// Set of canonical classes present in view, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scene {
    classes: Vec<String>,
}

impl Scene {
    pub fn new<S: AsRef<str>>(taxonomy: &Taxonomy, classes: impl IntoIterator<Item = S>) -> Result<Scene, OracleError> {
        let mut set = BTreeSet::new();
        for c in classes {
            let entry = taxonomy
                .get(c.as_ref())
                .ok_or_else(|| OracleError::UnknownClass(c.as_ref().to_string()))?;
            set.insert(entry.class.clone());
        }
        if set.len() > MAX_SCENE {
            return Err(OracleError::SceneTooLarge(set.len()));
        }
        Ok(Scene {
            classes: set.into_iter().collect(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    fn position(&self, class: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(class)).ok()
    }
}

/// Desired states for (a subset of) the scene's classes. Classes left out
/// are unconstrained.
pub type TargetConfig = BTreeMap<String, VisibilityState>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum StartState {
    /// Fresh store: everything hidden, slider at its top position.
    #[default]
    Default,
    States(BTreeMap<String, VisibilityState>),
}

impl Serialize for StartState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StartState::Default => s.serialize_str("default"),
            StartState::States(states) => states.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for StartState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            States(BTreeMap<String, VisibilityState>),
        }
        match Raw::deserialize(d)? {
            Raw::Tag(t) if t.eq_ignore_ascii_case("default") => Ok(StartState::Default),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("expected \"default\" or a state map, got {t:?}"))),
            Raw::States(states) => Ok(StartState::States(states)),
        }
    }
}

/// Price of each atomic action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub select_object: u32,
    pub toggle_class: u32,
    pub apply_group: u32,
    pub set_class: u32,
    pub set_slider: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            select_object: 1,
            toggle_class: 1,
            apply_group: 1,
            set_class: 1,
            set_slider: 1,
        }
    }
}

impl CostModel {
    pub fn cost(&self, event: &EventKind) -> u32 {
        match event {
            EventKind::SelectObject { .. } => self.select_object,
            EventKind::ToggleClass { .. } => self.toggle_class,
            EventKind::ApplyGroup { .. } => self.apply_group,
            EventKind::SetClass { .. } => self.set_class,
            EventKind::SetSlider { .. } => self.set_slider,
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        let all = [self.select_object, self.toggle_class, self.apply_group, self.set_class, self.set_slider];
        if all.contains(&0) {
            Err(OracleError::ZeroCost)
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostOutcome {
    Reachable { cost: u32, witness: Vec<EventKind> },
    /// The technique cannot express the target at all.
    Unreachable,
}

impl CostOutcome {
    pub fn cost(&self) -> Option<u32> {
        match self {
            CostOutcome::Reachable { cost, .. } => Some(*cost),
            CostOutcome::Unreachable => None,
        }
    }

    pub fn witness(&self) -> &[EventKind] {
        match self {
            CostOutcome::Reachable { witness, .. } => witness,
            CostOutcome::Unreachable => &[],
        }
    }
}

/// Track id used for the (single) on-screen object of a scene class in
/// witness sequences: its 1-based position in the sorted scene.
pub fn scene_track_id(scene: &Scene, class: &str) -> Option<u32> {
    scene.position(class).map(|i| i as u32 + 1)
}

struct Problem<'a> {
    scene: &'a Scene,
    start: u32,
    care: u32,
    want: u32,
    // per scene class, per dimension: mask of scene classes in the same group
    group_masks: Vec<[u32; 3]>,
}

fn bit(i: usize) -> u32 {
    1u32 << i
}

impl<'a> Problem<'a> {
    fn new(
        taxonomy: &Taxonomy,
        scene: &'a Scene,
        start: &StartState,
        target: &TargetConfig,
    ) -> Result<Self, OracleError> {
        let mut start_mask = 0u32;
        for (i, class) in scene.classes.iter().enumerate() {
            let hidden = match start {
                StartState::Default => true,
                StartState::States(states) => {
                    let state = states
                        .iter()
                        .find(|(c, _)| taxonomy.get(c).is_some_and(|e| &e.class == class))
                        .map(|(_, s)| *s);
                    state.unwrap_or(VisibilityState::Hidden) == VisibilityState::Hidden
                }
            };
            if hidden {
                start_mask |= bit(i);
            }
        }
        let (mut care, mut want) = (0u32, 0u32);
        for (class, state) in target {
            let entry = taxonomy
                .get(class)
                .ok_or_else(|| OracleError::UnknownClass(class.clone()))?;
            let i = scene
                .position(&entry.class)
                .ok_or_else(|| OracleError::TargetOutsideScene(class.clone()))?;
            care |= bit(i);
            if *state == VisibilityState::Hidden {
                want |= bit(i);
            }
        }
        let entries: Vec<_> = scene.classes.iter().map(|c| taxonomy.get(c).expect("scene validated")).collect();
        let group_masks = entries
            .iter()
            .map(|anchor| {
                let mut masks = [0u32; 3];
                for (d, dim) in Dimension::ALL.iter().enumerate() {
                    let key = anchor.group(*dim);
                    for (j, other) in entries.iter().enumerate() {
                        if other.in_group(key) {
                            masks[d] |= bit(j);
                        }
                    }
                }
                masks
            })
            .collect();
        Ok(Problem {
            scene,
            start: start_mask,
            care,
            want,
            group_masks,
        })
    }

    fn satisfied(&self, mask: u32) -> bool {
        mask & self.care == self.want
    }

    /// Successors of a state in ascending event order.
    fn successors(&self, technique: Mode, mask: u32, selected: Option<usize>, out: &mut Vec<(EventKind, u32, Option<usize>)>) {
        out.clear();
        let n = self.scene.len();
        let name = |i: usize| self.scene.classes[i].clone();
        match technique {
            Mode::VisGuardian => {
                for i in 0..n {
                    out.push((
                        EventKind::SelectObject { track_id: i as u32 + 1, class: name(i) },
                        mask,
                        Some(i),
                    ));
                }
                if let Some(s) = selected {
                    out.push((EventKind::ToggleClass { class: name(s) }, mask ^ bit(s), selected));
                    for (d, dim) in Dimension::ALL.iter().enumerate() {
                        let group = self.group_masks[s][d];
                        for action in [GroupAction::Hide, GroupAction::Reveal] {
                            let next = match action {
                                GroupAction::Hide => mask | group,
                                GroupAction::Reveal => mask & !group,
                            };
                            out.push((
                                EventKind::ApplyGroup { anchor: name(s), dimension: *dim, action },
                                next,
                                selected,
                            ));
                        }
                    }
                }
            }
            Mode::ObjectBaseline => {
                for i in 0..n {
                    for state in [VisibilityState::Hidden, VisibilityState::Revealed] {
                        let next = match state {
                            VisibilityState::Hidden => mask | bit(i),
                            VisibilityState::Revealed => mask & !bit(i),
                        };
                        out.push((EventKind::SetClass { class: name(i), state }, next, None));
                    }
                }
            }
            Mode::SliderBaseline => {
                for level in SliderLevel::all() {
                    out.push((
                        EventKind::SetSlider { level: level.get() },
                        slider_mask(self.scene, level),
                        None,
                    ));
                }
            }
        }
    }
}

/// Scene classes hidden at `level`, as a bitmask over the scene.
fn slider_mask(scene: &Scene, level: SliderLevel) -> u32 {
    scene
        .classes
        .iter()
        .enumerate()
        .filter(|(_, c)| level.hides(c))
        .fold(0, |m, (i, _)| m | bit(i))
}

/// Restricted to the scene, the configurations a slider can produce, one
/// per position.
pub fn slider_configurations(scene: &Scene) -> Vec<BTreeMap<String, VisibilityState>> {
    SliderLevel::all()
        .map(|level| {
            scene
                .classes
                .iter()
                .map(|c| {
                    let s = if level.hides(c) { VisibilityState::Hidden } else { VisibilityState::Revealed };
                    (c.clone(), s)
                })
                .collect()
        })
        .collect()
}

type Key = u64;

fn key(mask: u32, selected: Option<usize>) -> Key {
    mask as u64 | (selected.map_or(0, |s| s as u64 + 1) << 32)
}

fn unkey(k: Key) -> (u32, Option<usize>) {
    let sel = (k >> 32) as usize;
    (k as u32, sel.checked_sub(1))
}

/// Cheapest event sequence that takes `start` to `target` with `technique`.
///
/// The baselines have closed forms (one `SetClass` per differing class; the
/// cheapest slider position that matches); group-based control is searched.
pub fn min_interactions(
    technique: Mode,
    taxonomy: &Taxonomy,
    scene: &Scene,
    start: &StartState,
    target: &TargetConfig,
    costs: &CostModel,
) -> Result<CostOutcome, OracleError> {
    costs.validate()?;
    let problem = Problem::new(taxonomy, scene, start, target)?;
    if problem.satisfied(problem.start) {
        return Ok(CostOutcome::Reachable { cost: 0, witness: Vec::new() });
    }
    Ok(match technique {
        Mode::ObjectBaseline => {
            let diff = (problem.start ^ problem.want) & problem.care;
            let witness: Vec<EventKind> = (0..scene.len())
                .filter(|i| diff & bit(*i) != 0)
                .map(|i| EventKind::SetClass {
                    class: scene.classes[i].clone(),
                    state: if problem.want & bit(i) != 0 { VisibilityState::Hidden } else { VisibilityState::Revealed },
                })
                .collect();
            CostOutcome::Reachable { cost: witness.len() as u32 * costs.set_class, witness }
        }
        Mode::SliderBaseline => SliderLevel::all()
            .find(|l| problem.satisfied(slider_mask(scene, *l)))
            .map_or(CostOutcome::Unreachable, |l| CostOutcome::Reachable {
                cost: costs.set_slider,
                witness: vec![EventKind::SetSlider { level: l.get() }],
            }),
        Mode::VisGuardian => search(technique, &problem, costs),
    })
}

/// Uniform-cost search over (mask, selection) states. Works for every
/// technique; the baselines use it only to cross-check their closed forms.
fn search(technique: Mode, problem: &Problem<'_>, costs: &CostModel) -> CostOutcome {
    let origin = key(problem.start, None);
    if problem.satisfied(problem.start) {
        return CostOutcome::Reachable { cost: 0, witness: Vec::new() };
    }

    // Dial's algorithm: one FIFO bucket per total cost. Unit costs make
    // this breadth-first search.
    let mut best: HashMap<Key, (u32, Key, EventKind)> = HashMap::new();
    let mut buckets: Vec<VecDeque<Key>> = vec![VecDeque::from([origin])];
    let mut succ = Vec::new();
    let mut cost = 0usize;
    let mut found: Option<Key> = None;
    while cost < buckets.len() && found.is_none() {
        while let Some(k) = buckets[cost].pop_front() {
            if k != origin && best.get(&k).is_some_and(|(c, _, _)| *c as usize != cost) {
                continue;
            }
            let (mask, selected) = unkey(k);
            if problem.satisfied(mask) {
                found = Some(k);
                break;
            }
            problem.successors(technique, mask, selected, &mut succ);
            for (event, next_mask, next_sel) in succ.drain(..) {
                let nk = key(next_mask, next_sel);
                if nk == origin {
                    continue;
                }
                let nc = cost as u32 + costs.cost(&event);
                let improves = best.get(&nk).is_none_or(|(c, _, _)| nc < *c);
                if improves {
                    best.insert(nk, (nc, k, event));
                    let slot = nc as usize;
                    if buckets.len() <= slot {
                        buckets.resize_with(slot + 1, VecDeque::new);
                    }
                    buckets[slot].push_back(nk);
                }
            }
        }
        if found.is_none() {
            cost += 1;
        }
    }

    let Some(goal) = found else {
        return CostOutcome::Unreachable;
    };
    let total = best[&goal].0;
    let mut witness = Vec::new();
    let mut k = goal;
    while k != origin {
        let (_, parent, event) = &best[&k];
        witness.push(event.clone());
        k = *parent;
    }
    witness.reverse();
    CostOutcome::Reachable { cost: total, witness }
}

#[doc(hidden)]
pub fn min_interactions_by_search(
    technique: Mode,
    taxonomy: &Taxonomy,
    scene: &Scene,
    start: &StartState,
    target: &TargetConfig,
    costs: &CostModel,
) -> Result<CostOutcome, OracleError> {
    costs.validate()?;
    let problem = Problem::new(taxonomy, scene, start, target)?;
    Ok(search(technique, &problem, costs))
}

/// Reference minimum under unit costs, found by enumerating every store
/// reachable through [`PolicyStore::apply`] layer by layer. Exponential;
/// meant for small scenes. `None` if the target is not reached within
/// `max_depth` events.
pub fn enumerate_min_interactions(
    technique: Mode,
    taxonomy: Arc<Taxonomy>,
    scene: &Scene,
    start: &StartState,
    target: &TargetConfig,
    max_depth: u32,
) -> Result<Option<u32>, OracleError> {
    for class in target.keys() {
        let entry = taxonomy.get(class).ok_or_else(|| OracleError::UnknownClass(class.clone()))?;
        if scene.position(&entry.class).is_none() {
            return Err(OracleError::TargetOutsideScene(class.clone()));
        }
    }
    let states = match start {
        StartState::Default => BTreeMap::new(),
        StartState::States(states) => states.clone(),
    };
    let store = PolicyStore::from_file(
        Arc::clone(&taxonomy),
        PolicyFile {
            app_id: "enumeration".into(),
            mode: technique,
            slider_level: None,
            states,
            observed: BTreeSet::new(),
        },
    );
    let satisfied = |store: &PolicyStore| {
        target.iter().all(|(class, state)| store.resolve(class) == Resolution::from(*state))
    };

    let mut seen: HashSet<(String, Option<String>)> = HashSet::new();
    seen.insert((store.digest().to_string(), None));
    let mut frontier = vec![(store, None::<String>)];
    for depth in 0..=max_depth {
        if frontier.iter().any(|(store, _)| satisfied(store)) {
            return Ok(Some(depth));
        }
        let mut next = Vec::new();
        for (store, selected) in &frontier {
            let mut events: Vec<(EventKind, Option<String>)> = Vec::new();
            match technique {
                Mode::VisGuardian => {
                    for (i, class) in scene.classes().iter().enumerate() {
                        events.push((
                            EventKind::SelectObject { track_id: i as u32 + 1, class: class.clone() },
                            Some(class.clone()),
                        ));
                    }
                    if let Some(anchor) = selected {
                        events.push((EventKind::ToggleClass { class: anchor.clone() }, selected.clone()));
                        for dimension in Dimension::ALL {
                            for action in [GroupAction::Hide, GroupAction::Reveal] {
                                events.push((
                                    EventKind::ApplyGroup { anchor: anchor.clone(), dimension, action },
                                    selected.clone(),
                                ));
                            }
                        }
                    }
                }
                Mode::ObjectBaseline => {
                    for class in scene.classes() {
                        for state in [VisibilityState::Hidden, VisibilityState::Revealed] {
                            events.push((EventKind::SetClass { class: class.clone(), state }, None));
                        }
                    }
                }
                Mode::SliderBaseline => {
                    for level in SliderLevel::all() {
                        events.push((EventKind::SetSlider { level: level.get() }, None));
                    }
                }
            }
            for (kind, selection) in events {
                let mut child = store.clone();
                child
                    .apply(InteractionEvent::new(kind, 0))
                    .expect("generated events are valid for their mode");
                if seen.insert((child.digest().to_string(), selection.clone())) {
                    next.push((child, selection));
                }
            }
        }
        frontier = next;
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub technique: Mode,
    pub outcome: CostOutcome,
}

pub const ALL_TECHNIQUES: [Mode; 3] = [Mode::VisGuardian, Mode::ObjectBaseline, Mode::SliderBaseline];

pub fn compare_techniques(
    taxonomy: &Taxonomy,
    scene: &Scene,
    start: &StartState,
    target: &TargetConfig,
    costs: &CostModel,
    techniques: &[Mode],
) -> Result<Vec<Comparison>, OracleError> {
    techniques
        .iter()
        .map(|&technique| {
            Ok(Comparison {
                technique,
                outcome: min_interactions(technique, taxonomy, scene, start, target, costs)?,
            })
        })
        .collect()
}

/// Scenario file consumed by the `compare` command.
#[derive(Debug, Clone, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub scene: Vec<String>,
    #[serde(default)]
    pub start: StartState,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub techniques: Vec<String>,
    #[serde(default)]
    pub costs: CostModel,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, OracleError> {
        serde_json::from_str(text).map_err(|e| OracleError::Scenario(e.to_string()))
    }

    /// Requested techniques; all three when the list is empty.
    pub fn techniques(&self) -> Result<Vec<Mode>, OracleError> {
        if self.techniques.is_empty() {
            return Ok(ALL_TECHNIQUES.to_vec());
        }
        self.techniques
            .iter()
            .map(|t| t.parse::<Mode>().map_err(|_| OracleError::UnknownTechnique(t.clone())))
            .collect()
    }

    pub fn evaluate(&self, taxonomy: &Taxonomy) -> Result<Vec<Comparison>, OracleError> {
        let techniques = self.techniques()?;
        let scene = Scene::new(taxonomy, &self.scene)?;
        compare_techniques(taxonomy, &scene, &self.start, &self.target, &self.costs, &techniques)
    }
}

pub fn describe_event(event: &EventKind) -> String {
    match event {
        EventKind::SelectObject { track_id, class } => format!("SelectObject(#{track_id} {class})"),
        EventKind::ToggleClass { class } => format!("ToggleClass({class})"),
        EventKind::ApplyGroup { anchor, dimension, action } => {
            format!("ApplyGroup({anchor}, {dimension:?}, {action:?})")
        }
        EventKind::SetClass { class, state } => format!("SetClass({class}, {state:?})"),
        EventKind::SetSlider { level } => format!("SetSlider({level})"),
    }
}

fn witness_text(outcome: &CostOutcome) -> String {
    outcome.witness().iter().map(describe_event).collect::<Vec<_>>().join("; ")
}

pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["technique", "cost", "witness"]).expect("in-memory write");
    for row in rows {
        let cost = row.outcome.cost().map_or_else(|| "unreachable".to_string(), |c| c.to_string());
        w.write_record([format!("{:?}", row.technique), cost, witness_text(&row.outcome)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn comparison_table(rows: &[Comparison]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>11}  witness", "technique", "cost");
    for row in rows {
        let cost = row.outcome.cost().map_or_else(|| "unreachable".to_string(), |c| c.to_string());
        let _ = writeln!(out, "{:<16} {:>11}  {}", format!("{:?}", row.technique), cost, witness_text(&row.outcome));
    }
    out
}
