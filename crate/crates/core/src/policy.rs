//! Default-deny permission engine.
//!
//! A [`PolicyStore`] holds one application's per-class visibility states.
//! Every sensitive class starts `Hidden`; only [`PolicyStore::apply`] changes
//! a state. Readers take a [`PolicyView`] snapshot, which is immutable and
//! cheap to clone.
//!
//! The policy digest is the lowercase hex SHA-256 of the effective state map
//! serialized as one `"{class}\t{Hidden|Revealed}\n"` line per class, in
//! byte order of the class names.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{Dimension, Taxonomy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("{event} is not available in {mode:?} mode")]
    ModeMismatch { event: &'static str, mode: Mode },
    #[error("class `{0}` is not in the taxonomy")]
    NotFound(String),
    #[error("slider level {0} is outside 1..=5")]
    InvalidLevel(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VisibilityState {
    Hidden,
    Revealed,
}

impl VisibilityState {
    pub fn flipped(self) -> Self {
        match self {
            VisibilityState::Hidden => VisibilityState::Revealed,
            VisibilityState::Revealed => VisibilityState::Hidden,
        }
    }
}

/// What the sanitizer should do with a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    Hidden,
    Revealed,
    NotSensitive,
}

impl From<VisibilityState> for Resolution {
    fn from(s: VisibilityState) -> Self {
        match s {
            VisibilityState::Hidden => Resolution::Hidden,
            VisibilityState::Revealed => Resolution::Revealed,
        }
    }
}

/// Control technique backing a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    VisGuardian,
    SliderBaseline,
    ObjectBaseline,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "visguardian" | "group" => Ok(Mode::VisGuardian),
            "sliderbaseline" | "slider" => Ok(Mode::SliderBaseline),
            "objectbaseline" | "object" => Ok(Mode::ObjectBaseline),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

/// Cumulative hide sets for slider positions 1 through 5.
pub const SLIDER_TABLE: [&[&str]; 5] = [
    &[],
    &["person", "medicine", "underwear", "license plate", "jewelry"],
    &[
        "person", "medicine", "underwear", "license plate", "jewelry", "toilet", "mobile phone",
        "laptop computer", "gun", "drunk",
    ],
    &[
        "person", "medicine", "underwear", "license plate", "jewelry", "toilet", "mobile phone",
        "laptop computer", "gun", "drunk", "wheelchair", "signed document", "ID card", "checkbook",
        "swimsuit", "calendar",
    ],
    &[
        "person", "medicine", "underwear", "license plate", "jewelry", "toilet", "mobile phone",
        "laptop computer", "gun", "drunk", "wheelchair", "signed document", "ID card", "checkbook",
        "swimsuit", "calendar", "skirt", "pajamas", "legging", "file cabinet", "book", "badge",
    ],
];

/// Slider position, 1 (obfuscate none) through 5 (obfuscate all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SliderLevel(u8);

impl SliderLevel {
    pub const MIN: SliderLevel = SliderLevel(1);
    pub const MAX: SliderLevel = SliderLevel(5);

    pub fn new(level: u8) -> Result<Self, PolicyError> {
        if (1..=5).contains(&level) {
            Ok(SliderLevel(level))
        } else {
            Err(PolicyError::InvalidLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = SliderLevel> {
        (1..=5).map(SliderLevel)
    }

    /// Class names obfuscated at this position, as listed in the table.
    pub fn hidden_set(self) -> &'static [&'static str] {
        SLIDER_TABLE[self.0 as usize - 1]
    }

    /// Whether `class` is obfuscated at this position. Classes the table
    /// does not list are hidden only at the top position.
    pub fn hides(self, class: &str) -> bool {
        self == SliderLevel::MAX || self.hidden_set().iter().any(|c| c.eq_ignore_ascii_case(class))
    }
}

impl TryFrom<u8> for SliderLevel {
    type Error = PolicyError;

    fn try_from(v: u8) -> Result<Self, PolicyError> {
        SliderLevel::new(v)
    }
}

impl From<SliderLevel> for u8 {
    fn from(l: SliderLevel) -> u8 {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GroupAction {
    Hide,
    Reveal,
}

impl GroupAction {
    pub fn target_state(self) -> VisibilityState {
        match self {
            GroupAction::Hide => VisibilityState::Hidden,
            GroupAction::Reveal => VisibilityState::Revealed,
        }
    }
}

/// One atomic user action. The derived ordering is the tie-break order used
/// when several interaction sequences are equally cheap.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    SelectObject { track_id: u32, class: String },
    ToggleClass { class: String },
    ApplyGroup { anchor: String, dimension: Dimension, action: GroupAction },
    SetClass { class: String, state: VisibilityState },
    SetSlider { level: u8 },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SelectObject { .. } => "SelectObject",
            EventKind::ToggleClass { .. } => "ToggleClass",
            EventKind::ApplyGroup { .. } => "ApplyGroup",
            EventKind::SetClass { .. } => "SetClass",
            EventKind::SetSlider { .. } => "SetSlider",
        }
    }

    pub fn allowed_in(&self, mode: Mode) -> bool {
        match self {
            EventKind::SelectObject { .. } | EventKind::ToggleClass { .. } | EventKind::ApplyGroup { .. } => {
                mode == Mode::VisGuardian
            }
            EventKind::SetClass { .. } => mode == Mode::ObjectBaseline,
            EventKind::SetSlider { .. } => mode == Mode::SliderBaseline,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionEvent {
    #[serde(flatten)]
    pub kind: EventKind,
    /// Monotonic milliseconds; frame index when replaying a script.
    #[serde(default)]
    pub timestamp: u64,
}

impl InteractionEvent {
    pub fn new(kind: EventKind, timestamp: u64) -> Self {
        InteractionEvent { kind, timestamp }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewClassEvent {
    pub class: String,
    pub frame_index: u64,
    pub default_state: VisibilityState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub class: String,
    pub old: VisibilityState,
    pub new: VisibilityState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub event: InteractionEvent,
    pub delta: Vec<StateChange>,
    pub digest: String,
}

/// The three groups an anchor class belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupQuery {
    pub anchor: String,
    pub sensitivity_group: Vec<String>,
    pub category_group: Vec<String>,
    pub spatial_group: Vec<String>,
}

impl GroupQuery {
    pub fn group(&self, dimension: Dimension) -> &[String] {
        match dimension {
            Dimension::Sensitivity => &self.sensitivity_group,
            Dimension::Category => &self.category_group,
            Dimension::Spatial => &self.spatial_group,
        }
    }
}

pub fn query_groups(taxonomy: &Taxonomy, anchor: &str) -> Result<GroupQuery, PolicyError> {
    let entry = taxonomy
        .get(anchor)
        .ok_or_else(|| PolicyError::NotFound(anchor.to_string()))?;
    let members = |d| taxonomy.group_members(entry.group(d));
    Ok(GroupQuery {
        anchor: entry.class.clone(),
        sensitivity_group: members(Dimension::Sensitivity),
        category_group: members(Dimension::Category),
        spatial_group: members(Dimension::Spatial),
    })
}

pub fn digest_states(states: &BTreeMap<String, VisibilityState>) -> String {
    let mut hasher = Sha256::new();
    for (class, state) in states {
        hasher.update(class.as_bytes());
        hasher.update(b"\t");
        hasher.update(match state {
            VisibilityState::Hidden => b"Hidden\n".as_slice(),
            VisibilityState::Revealed => b"Revealed\n".as_slice(),
        });
    }
    hex::encode(hasher.finalize())
}

/// Frozen policy, taken once per frame.
#[derive(Debug, Clone)]
pub struct PolicyView {
    taxonomy: Arc<Taxonomy>,
    states: Arc<BTreeMap<String, VisibilityState>>,
    digest: Arc<str>,
}

impl PolicyView {
    pub fn resolve(&self, class: &str) -> Resolution {
        if let Some(s) = self.states.get(class) {
            return (*s).into();
        }
        match self.taxonomy.get(class) {
            Some(entry) => self
                .states
                .get(&entry.class)
                .map_or(Resolution::NotSensitive, |s| (*s).into()),
            None => Resolution::NotSensitive,
        }
    }

    pub fn resolve_label(&self, label: &crate::detect::ClassLabel) -> Resolution {
        match label.sensitive() {
            Some(class) => self.resolve(class),
            None => Resolution::NotSensitive,
        }
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn states(&self) -> &BTreeMap<String, VisibilityState> {
        &self.states
    }

    /// Builds a view over an explicit state map.
    pub fn from_states(taxonomy: Arc<Taxonomy>, states: BTreeMap<String, VisibilityState>) -> Self {
        let digest = digest_states(&states).into();
        PolicyView {
            taxonomy,
            states: Arc::new(states),
            digest,
        }
    }
}

/// Persisted form of a store (`--policy-out` / `--policy-in`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub app_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slider_level: Option<SliderLevel>,
    pub states: BTreeMap<String, VisibilityState>,
    #[serde(default)]
    pub observed: BTreeSet<String>,
}

/// Per-application visibility state.
#[derive(Debug, Clone)]
pub struct PolicyStore {
    app_id: String,
    taxonomy: Arc<Taxonomy>,
    mode: Mode,
    slider_level: Option<SliderLevel>,
    states: Arc<BTreeMap<String, VisibilityState>>,
    observed: BTreeSet<String>,
    digest: Arc<str>,
}

impl PolicyStore {
    /// Fresh store: every taxonomy class is `Hidden`, nothing observed, and
    /// the slider (if any) at its top position.
    pub fn new(app_id: impl Into<String>, taxonomy: Arc<Taxonomy>, mode: Mode) -> Self {
        let states: BTreeMap<String, VisibilityState> = taxonomy
            .entries()
            .iter()
            .map(|e| (e.class.clone(), VisibilityState::Hidden))
            .collect();
        let digest = digest_states(&states).into();
        PolicyStore {
            app_id: app_id.into(),
            taxonomy,
            mode,
            slider_level: (mode == Mode::SliderBaseline).then_some(SliderLevel::MAX),
            states: Arc::new(states),
            observed: BTreeSet::new(),
            digest,
        }
    }

    pub fn app_id(&self) -> &str {
        &self.app_id
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn slider_level(&self) -> Option<SliderLevel> {
        self.slider_level
    }

    pub fn states(&self) -> &BTreeMap<String, VisibilityState> {
        &self.states
    }

    pub fn observed(&self) -> &BTreeSet<String> {
        &self.observed
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn resolve(&self, class: &str) -> Resolution {
        self.snapshot().resolve(class)
    }

    pub fn snapshot(&self) -> PolicyView {
        PolicyView {
            taxonomy: Arc::clone(&self.taxonomy),
            states: Arc::clone(&self.states),
            digest: Arc::clone(&self.digest),
        }
    }

    /// Records the sensitive classes present in a frame and returns one
    /// event per class seen for the first time. States are not touched.
    pub fn observe<'a>(
        &mut self,
        classes: impl IntoIterator<Item = &'a str>,
        frame_index: u64,
    ) -> Vec<NewClassEvent> {
        let mut events = Vec::new();
        for label in classes {
            let Some(entry) = self.taxonomy.get(label) else {
                continue;
            };
            if self.observed.insert(entry.class.clone()) {
                events.push(NewClassEvent {
                    class: entry.class.clone(),
                    frame_index,
                    default_state: VisibilityState::Hidden,
                });
            }
        }
        events
    }

    fn canonical(&self, class: &str) -> Result<String, PolicyError> {
        self.taxonomy
            .get(class)
            .map(|e| e.class.clone())
            .ok_or_else(|| PolicyError::NotFound(class.to_string()))
    }

    /// Applies one interaction. Rejected events leave the store untouched.
    pub fn apply(&mut self, event: InteractionEvent) -> Result<AuditRecord, PolicyError> {
        if !event.kind.allowed_in(self.mode) {
            return Err(PolicyError::ModeMismatch {
                event: event.kind.name(),
                mode: self.mode,
            });
        }
        let mut targets: Vec<(String, VisibilityState)> = Vec::new();
        match &event.kind {
            EventKind::SelectObject { class, .. } => {
                self.canonical(class)?;
            }
            EventKind::ToggleClass { class } => {
                let class = self.canonical(class)?;
                let next = self.states[&class].flipped();
                targets.push((class, next));
            }
            EventKind::ApplyGroup { anchor, dimension, action } => {
                let groups = query_groups(&self.taxonomy, anchor)?;
                let state = action.target_state();
                targets.extend(groups.group(*dimension).iter().map(|c| (c.clone(), state)));
            }
            EventKind::SetClass { class, state } => {
                targets.push((self.canonical(class)?, *state));
            }
            EventKind::SetSlider { level } => {
                let level = SliderLevel::new(*level)?;
                self.slider_level = Some(level);
                targets.extend(self.taxonomy.entries().iter().map(|e| {
                    let state = if level.hides(&e.class) {
                        VisibilityState::Hidden
                    } else {
                        VisibilityState::Revealed
                    };
                    (e.class.clone(), state)
                }));
            }
        }

        let mut delta = Vec::new();
        for (class, new) in targets {
            let old = self.states[&class];
            if old != new {
                Arc::make_mut(&mut self.states).insert(class.clone(), new);
                self.observed.insert(class.clone());
                delta.push(StateChange { class, old, new });
            }
        }
        if !delta.is_empty() {
            self.digest = digest_states(&self.states).into();
        }
        Ok(AuditRecord {
            event,
            delta,
            digest: self.digest.to_string(),
        })
    }

    pub fn to_file(&self) -> PolicyFile {
        PolicyFile {
            app_id: self.app_id.clone(),
            mode: self.mode,
            slider_level: self.slider_level,
            states: (*self.states).clone(),
            observed: self.observed.clone(),
        }
    }

    /// Restores a persisted store. Classes unknown to `taxonomy` are
    /// dropped; classes the file does not mention start `Hidden`.
    pub fn from_file(taxonomy: Arc<Taxonomy>, file: PolicyFile) -> Self {
        let mut store = PolicyStore::new(file.app_id, Arc::clone(&taxonomy), file.mode);
        if file.mode == Mode::SliderBaseline {
            store.slider_level = Some(file.slider_level.unwrap_or(SliderLevel::MAX));
        }
        let states = Arc::make_mut(&mut store.states);
        for (class, state) in file.states {
            if let Some(entry) = taxonomy.get(&class) {
                states.insert(entry.class.clone(), state);
            }
        }
        store.observed = file
            .observed
            .iter()
            .filter_map(|c| taxonomy.get(c).map(|e| e.class.clone()))
            .collect();
        store.digest = digest_states(&store.states).into();
        store
    }
}

/// Append-only JSON Lines audit log.
pub struct AuditLog {
    out: BufWriter<File>,
}

impl AuditLog {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &AuditRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn read(path: impl AsRef<Path>) -> std::io::Result<Vec<AuditRecord>> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(mode: Mode) -> PolicyStore {
        PolicyStore::new("appA", Arc::new(Taxonomy::bundled()), mode)
    }

    fn ev(kind: EventKind) -> InteractionEvent {
        InteractionEvent::new(kind, 0)
    }

    fn toggle(class: &str) -> InteractionEvent {
        ev(EventKind::ToggleClass { class: class.into() })
    }

    fn names(delta: &[StateChange]) -> BTreeSet<&str> {
        delta.iter().map(|c| c.class.as_str()).collect()
    }

    #[test]
    fn fresh_store_hides_everything() {
        let s = store(Mode::VisGuardian);
        assert_eq!(s.resolve("person"), Resolution::Hidden);
        assert_eq!(s.resolve("toilet"), Resolution::Hidden);
        assert_eq!(s.resolve("coffee mug"), Resolution::NotSensitive);
        assert!(s.observed().is_empty());
    }

    #[test]
    fn empty_taxonomy_store() {
        let s = PolicyStore::new("a", Arc::new(Taxonomy::default()), Mode::VisGuardian);
        assert!(s.states().is_empty());
    }

    #[test]
    fn slider_store_starts_at_five() {
        let s = store(Mode::SliderBaseline);
        assert_eq!(s.slider_level(), Some(SliderLevel::MAX));
        assert!(s.states().values().all(|v| *v == VisibilityState::Hidden));
        assert_eq!(s.states().len(), 22);
    }

    #[test]
    fn slider_level_two() {
        let mut s = store(Mode::SliderBaseline);
        s.apply(ev(EventKind::SetSlider { level: 2 })).unwrap();
        assert_eq!(s.resolve("toilet"), Resolution::Revealed);
        assert_eq!(s.resolve("license plate"), Resolution::Hidden);
        assert_eq!(s.resolve("coffee mug"), Resolution::NotSensitive);
    }

    #[test]
    fn slider_two_to_three_delta() {
        let mut s = store(Mode::SliderBaseline);
        s.apply(ev(EventKind::SetSlider { level: 2 })).unwrap();
        let rec = s.apply(ev(EventKind::SetSlider { level: 3 })).unwrap();
        assert_eq!(
            names(&rec.delta),
            ["toilet", "mobile phone", "laptop computer", "gun", "drunk"].into_iter().collect()
        );
        assert!(rec.delta.iter().all(|c| c.new == VisibilityState::Hidden));
    }

    #[test]
    fn slider_table_is_cumulative() {
        for w in SLIDER_TABLE.windows(2) {
            let (lo, hi): (BTreeSet<_>, BTreeSet<_>) =
                (w[0].iter().collect(), w[1].iter().collect());
            assert!(lo.is_subset(&hi) && lo.len() < hi.len());
        }
        assert_eq!(SLIDER_TABLE[4].len(), 22);
    }

    #[test]
    fn invalid_slider_level() {
        let mut s = store(Mode::SliderBaseline);
        let before = s.digest().to_string();
        assert_eq!(
            s.apply(ev(EventKind::SetSlider { level: 6 })),
            Err(PolicyError::InvalidLevel(6))
        );
        assert_eq!(s.digest(), before);
    }

    #[test]
    fn observe_emits_once() {
        let mut s = store(Mode::VisGuardian);
        assert_eq!(s.observe(["person", "book"], 0).len(), 2);
        assert!(s.observe(["person", "book"], 1).is_empty());
        assert!(s.observe(["coffee mug"], 2).is_empty());
        assert_eq!(s.resolve("person"), Resolution::Hidden);
    }

    #[test]
    fn group_queries() {
        let tax = Taxonomy::bundled();
        let sorted = |xs: &[&str]| {
            let mut v: Vec<String> = xs.iter().map(|s| s.to_string()).collect();
            v.sort();
            v
        };
        let q = query_groups(&tax, "ID card").unwrap();
        assert_eq!(
            q.category_group,
            sorted(&["person", "badge", "ID card", "checkbook", "signed document"])
        );
        assert_eq!(
            q.spatial_group,
            sorted(&["badge", "ID card", "checkbook", "signed document", "file cabinet", "book", "calendar"])
        );
        let q = query_groups(&tax, "underwear").unwrap();
        assert_eq!(q.sensitivity_group, sorted(&["person", "underwear", "jewelry", "medicine"]));
        assert_eq!(
            q.category_group,
            sorted(&["underwear", "swimsuit", "legging", "pajamas", "skirt"])
        );
        assert_eq!(q.spatial_group, sorted(&["person", "underwear", "jewelry", "mobile phone"]));
        assert_eq!(query_groups(&tax, "medicine").unwrap().spatial_group, sorted(&["medicine"]));
        assert_eq!(
            query_groups(&tax, "doorknob"),
            Err(PolicyError::NotFound("doorknob".into()))
        );
    }

    #[test]
    fn reveal_clothes_group() {
        let mut s = store(Mode::VisGuardian);
        let rec = s
            .apply(ev(EventKind::ApplyGroup {
                anchor: "underwear".into(),
                dimension: Dimension::Category,
                action: GroupAction::Reveal,
            }))
            .unwrap();
        assert_eq!(
            names(&rec.delta),
            ["underwear", "swimsuit", "legging", "pajamas", "skirt"].into_iter().collect()
        );
        assert_eq!(s.resolve("person"), Resolution::Hidden);
    }

    #[test]
    fn toggle_twice_is_identity() {
        let mut s = store(Mode::VisGuardian);
        let d0 = s.digest().to_string();
        let a = s.apply(toggle("person")).unwrap();
        assert_ne!(a.digest, d0);
        let b = s.apply(toggle("person")).unwrap();
        assert_eq!(b.digest, d0);
        assert_eq!(a.delta.len() + b.delta.len(), 2);
    }

    #[test]
    fn select_object_is_audited_without_change() {
        let mut s = store(Mode::VisGuardian);
        let rec = s
            .apply(ev(EventKind::SelectObject { track_id: 3, class: "book".into() }))
            .unwrap();
        assert!(rec.delta.is_empty());
        assert_eq!(rec.digest, s.digest());
    }

    #[test]
    fn mode_mismatch_leaves_state() {
        let mut s = store(Mode::ObjectBaseline);
        let d0 = s.digest().to_string();
        assert!(matches!(s.apply(toggle("person")), Err(PolicyError::ModeMismatch { .. })));
        assert!(matches!(
            s.apply(ev(EventKind::SetSlider { level: 2 })),
            Err(PolicyError::ModeMismatch { .. })
        ));
        assert_eq!(s.digest(), d0);
        let mut v = store(Mode::VisGuardian);
        assert!(matches!(
            v.apply(ev(EventKind::SetClass { class: "book".into(), state: VisibilityState::Revealed })),
            Err(PolicyError::ModeMismatch { .. })
        ));
    }

    #[test]
    fn unknown_class_rejected() {
        let mut s = store(Mode::VisGuardian);
        assert_eq!(s.apply(toggle("doorknob")), Err(PolicyError::NotFound("doorknob".into())));
    }

    #[test]
    fn snapshot_isolated_from_later_events() {
        let mut s = store(Mode::VisGuardian);
        let view = s.snapshot();
        let again = s.snapshot();
        assert_eq!(view.digest(), again.digest());
        s.apply(toggle("book")).unwrap();
        assert_eq!(view.resolve("book"), Resolution::Hidden);
        assert_eq!(s.resolve("book"), Resolution::Revealed);
    }

    #[test]
    fn case_insensitive_resolution() {
        let s = store(Mode::VisGuardian);
        assert_eq!(s.resolve("id card"), Resolution::Hidden);
    }

    #[test]
    fn event_json_shape() {
        let e: InteractionEvent = serde_json::from_str(
            r#"{"kind":"ApplyGroup","anchor":"underwear","dimension":"Category","action":"Reveal","timestamp":4}"#,
        )
        .unwrap();
        assert_eq!(e.timestamp, 4);
        assert!(matches!(e.kind, EventKind::ApplyGroup { .. }));
        let e: InteractionEvent = serde_json::from_str(r#"{"kind":"ToggleClass","class":"book"}"#).unwrap();
        assert_eq!(e.timestamp, 0);
    }

    #[test]
    fn policy_file_roundtrip() {
        let mut s = store(Mode::VisGuardian);
        s.apply(toggle("book")).unwrap();
        let json = serde_json::to_string(&s.to_file()).unwrap();
        let back = PolicyStore::from_file(Arc::clone(s.taxonomy()), serde_json::from_str(&json).unwrap());
        assert_eq!(back.digest(), s.digest());
        assert_eq!(back.observed(), s.observed());
    }

    #[test]
    fn audit_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let mut s = store(Mode::VisGuardian);
        let mut log = AuditLog::create(&path).unwrap();
        for c in ["book", "person"] {
            log.append(&s.apply(toggle(c)).unwrap()).unwrap();
        }
        let records = AuditLog::read(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].digest, s.digest());
    }

    fn arb_event() -> impl Strategy<Value = EventKind> {
        let classes: Vec<String> = Taxonomy::bundled().classes().iter().map(|s| s.to_string()).collect();
        let class = proptest::sample::select(classes);
        prop_oneof![
            class.clone().prop_map(|class| EventKind::ToggleClass { class }),
            (class.clone(), 0usize..3, any::<bool>()).prop_map(|(anchor, d, hide)| EventKind::ApplyGroup {
                anchor,
                dimension: Dimension::ALL[d],
                action: if hide { GroupAction::Hide } else { GroupAction::Reveal },
            }),
            (class.clone(), any::<u32>()).prop_map(|(class, track_id)| EventKind::SelectObject { track_id, class }),
            (class, any::<bool>()).prop_map(|(class, h)| EventKind::SetClass {
                class,
                state: if h { VisibilityState::Hidden } else { VisibilityState::Revealed },
            }),
            (0u8..8).prop_map(|level| EventKind::SetSlider { level }),
        ]
    }

    proptest! {
        #[test]
        fn audit_replay_reproduces_digest(events in proptest::collection::vec(arb_event(), 0..30), m in 0usize..3) {
            let mode = [Mode::VisGuardian, Mode::SliderBaseline, Mode::ObjectBaseline][m];
            let mut s = store(mode);
            let mut records = Vec::new();
            for e in events {
                let before = s.digest().to_string();
                match s.apply(ev(e)) {
                    Ok(r) => records.push(r),
                    Err(_) => prop_assert_eq!(s.digest(), before.as_str()),
                }
            }
            let mut replay = store(mode);
            for r in &records {
                let again = replay.apply(r.event.clone()).unwrap();
                prop_assert_eq!(&again, r);
            }
            prop_assert_eq!(replay.digest(), s.digest());
        }

        #[test]
        fn group_action_only_touches_group(anchor in proptest::sample::select(Taxonomy::bundled().classes().iter().map(|s| s.to_string()).collect::<Vec<_>>()),
                                           d in 0usize..3, pre in proptest::collection::vec(arb_event(), 0..10)) {
            let mut s = store(Mode::VisGuardian);
            for e in pre { let _ = s.apply(ev(e)); }
            let before = s.states().clone();
            let dim = Dimension::ALL[d];
            s.apply(ev(EventKind::ApplyGroup { anchor: anchor.clone(), dimension: dim, action: GroupAction::Hide })).unwrap();
            let group = query_groups(s.taxonomy(), &anchor).unwrap();
            for (class, state) in s.states() {
                if group.group(dim).contains(class) {
                    prop_assert_eq!(*state, VisibilityState::Hidden);
                } else {
                    prop_assert_eq!(*state, before[class]);
                }
            }
        }

        #[test]
        fn observe_never_changes_states(classes in proptest::collection::vec(proptest::sample::select(vec!["person", "book", "toilet", "mug", "ID card"]), 0..10)) {
            let mut s = store(Mode::VisGuardian);
            s.apply(toggle("book")).unwrap();
            let d = s.digest().to_string();
            s.observe(classes.iter().copied(), 0);
            prop_assert_eq!(s.digest(), d.as_str());
        }
    }
}
