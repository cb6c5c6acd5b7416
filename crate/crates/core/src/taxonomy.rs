//! Privacy-object taxonomy: the sensitive classes, their three grouping
//! attributes, and the detector-label alias map.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy document is malformed: {0}")]
    Parse(String),
    #[error("invalid taxonomy entry `{entry}`: {reason}")]
    Validation { entry: String, reason: String },
    #[error("class `{0}` is not in the taxonomy")]
    NotFound(String),
    #[error("failed to read taxonomy {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Privacy sensitivity. Ordered `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 3] = [RiskLevel::High, RiskLevel::Medium, RiskLevel::Low];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpatialGroup {
    Personal,
    Activity,
    Bedroom,
    Office,
    Bathroom,
    Living,
}

impl SpatialGroup {
    pub const ALL: [SpatialGroup; 6] = [
        SpatialGroup::Personal,
        SpatialGroup::Activity,
        SpatialGroup::Bedroom,
        SpatialGroup::Office,
        SpatialGroup::Bathroom,
        SpatialGroup::Living,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TypeGroup {
    PersonalMarker,
    Clothes,
    Digital,
    Safety,
    Appendences,
    Others,
}

impl TypeGroup {
    pub const ALL: [TypeGroup; 6] = [
        TypeGroup::PersonalMarker,
        TypeGroup::Clothes,
        TypeGroup::Digital,
        TypeGroup::Safety,
        TypeGroup::Appendences,
        TypeGroup::Others,
    ];
}

impl FromStr for RiskLevel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match normalize(s).as_str() {
            "high" => Ok(RiskLevel::High),
            "medium" | "med" => Ok(RiskLevel::Medium),
            "low" => Ok(RiskLevel::Low),
            _ => Err(()),
        }
    }
}

impl FromStr for SpatialGroup {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match normalize(s).as_str() {
            "personal" => Ok(SpatialGroup::Personal),
            "activity" => Ok(SpatialGroup::Activity),
            "bedroom" => Ok(SpatialGroup::Bedroom),
            "office" => Ok(SpatialGroup::Office),
            "bathroom" | "bath" => Ok(SpatialGroup::Bathroom),
            "living" => Ok(SpatialGroup::Living),
            _ => Err(()),
        }
    }
}

impl FromStr for TypeGroup {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match normalize(s).replace([' ', '_'], "").as_str() {
            "personalmarker" => Ok(TypeGroup::PersonalMarker),
            "clothes" => Ok(TypeGroup::Clothes),
            "digital" => Ok(TypeGroup::Digital),
            "safety" => Ok(TypeGroup::Safety),
            "appendences" => Ok(TypeGroup::Appendences),
            "others" => Ok(TypeGroup::Others),
            _ => Err(()),
        }
    }
}

/// One of the three grouping dimensions exposed to the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    Sensitivity,
    Category,
    Spatial,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Sensitivity, Dimension::Category, Dimension::Spatial];
}

/// A concrete group: a dimension together with the attribute value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupKey {
    Sensitivity(RiskLevel),
    Category(TypeGroup),
    Spatial(SpatialGroup),
}

impl GroupKey {
    pub fn dimension(&self) -> Dimension {
        match self {
            GroupKey::Sensitivity(_) => Dimension::Sensitivity,
            GroupKey::Category(_) => Dimension::Category,
            GroupKey::Spatial(_) => Dimension::Spatial,
        }
    }

    /// Every group along `dimension`.
    pub fn all_in(dimension: Dimension) -> Vec<GroupKey> {
        match dimension {
            Dimension::Sensitivity => RiskLevel::ALL.into_iter().map(GroupKey::Sensitivity).collect(),
            Dimension::Category => TypeGroup::ALL.into_iter().map(GroupKey::Category).collect(),
            Dimension::Spatial => SpatialGroup::ALL.into_iter().map(GroupKey::Spatial).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub class: String,
    pub risk: RiskLevel,
    pub space: SpatialGroup,
    #[serde(rename = "type")]
    pub type_group: TypeGroup,
}

impl TaxonomyEntry {
    pub fn group(&self, dimension: Dimension) -> GroupKey {
        match dimension {
            Dimension::Sensitivity => GroupKey::Sensitivity(self.risk),
            Dimension::Category => GroupKey::Category(self.type_group),
            Dimension::Spatial => GroupKey::Spatial(self.space),
        }
    }

    pub fn in_group(&self, key: GroupKey) -> bool {
        self.group(key.dimension()) == key
    }
}

#[derive(Deserialize)]
struct RawDocument {
    entries: Vec<RawEntry>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawEntry {
    class: String,
    risk: String,
    space: String,
    #[serde(rename = "type")]
    type_group: String,
}

/// Serialized form, as served by `GET /taxonomy`.
#[derive(Debug, Clone, Serialize)]
pub struct TaxonomyDocument<'a> {
    pub entries: Vec<&'a TaxonomyEntry>,
    pub aliases: &'a BTreeMap<String, String>,
}

/// Validated, immutable taxonomy.
///
/// Class names keep the casing of the source document ("ID card") but all
/// lookups go through a trimmed, lowercased key.
#[derive(Debug, Clone, Default)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
    aliases: BTreeMap<String, String>,
    // normalized class or alias -> index into `entries`
    index: BTreeMap<String, usize>,
    by_class: BTreeMap<String, usize>,
}

pub(crate) fn normalize(label: &str) -> String {
    label.trim().to_lowercase()
}

impl Taxonomy {
    /// The taxonomy document shipped with the crate.
    pub fn bundled() -> Taxonomy {
        Taxonomy::from_json(BUNDLED).expect("bundled taxonomy is valid")
    }

    pub fn bundled_json() -> &'static str {
        BUNDLED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Taxonomy, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Taxonomy::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Taxonomy, TaxonomyError> {
        let raw: RawDocument =
            serde_json::from_str(text).map_err(|e| TaxonomyError::Parse(e.to_string()))?;
        let mut entries = Vec::with_capacity(raw.entries.len());
        for e in raw.entries {
            let invalid = |field: &str, value: &str| TaxonomyError::Validation {
                entry: e.class.clone(),
                reason: format!("unknown {field} value `{value}`"),
            };
            let class = e.class.trim().to_string();
            if class.is_empty() {
                return Err(TaxonomyError::Validation {
                    entry: e.class.clone(),
                    reason: "empty class name".into(),
                });
            }
            entries.push(TaxonomyEntry {
                risk: e.risk.parse().map_err(|_| invalid("risk", &e.risk))?,
                space: e.space.parse().map_err(|_| invalid("space", &e.space))?,
                type_group: e.type_group.parse().map_err(|_| invalid("type", &e.type_group))?,
                class,
            });
        }
        Taxonomy::new(entries, raw.aliases)
    }

    pub fn new(
        entries: Vec<TaxonomyEntry>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Taxonomy, TaxonomyError> {
        let mut by_class = BTreeMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_class.insert(normalize(&e.class), i).is_some() {
                return Err(TaxonomyError::Validation {
                    entry: e.class.clone(),
                    reason: "duplicate class".into(),
                });
            }
        }
        let mut index = by_class.clone();
        for (label, target) in &aliases {
            let Some(&target_idx) = by_class.get(&normalize(target)) else {
                return Err(TaxonomyError::Validation {
                    entry: label.clone(),
                    reason: format!("alias target `{target}` is not a taxonomy class"),
                });
            };
            let key = normalize(label);
            match index.get(&key) {
                Some(&existing) if existing != target_idx => {
                    return Err(TaxonomyError::Validation {
                        entry: label.clone(),
                        reason: "alias conflicts with another class or alias".into(),
                    });
                }
                _ => {
                    index.insert(key, target_idx);
                }
            }
        }
        let aliases = aliases
            .into_iter()
            .map(|(label, target)| {
                let canonical = entries[by_class[&normalize(&target)]].class.clone();
                (label, canonical)
            })
            .collect();
        Ok(Taxonomy {
            entries,
            aliases,
            index,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in document order.
    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Canonical class names, sorted.
    pub fn classes(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.class.as_str()).collect();
        names.sort_unstable();
        names
    }

    /// Maps a detector label onto its canonical class. `None` means the
    /// label is not sensitive.
    pub fn canonicalize(&self, label: &str) -> Option<&str> {
        self.index
            .get(&normalize(label))
            .map(|&i| self.entries[i].class.as_str())
    }

    pub fn lookup(&self, class: &str) -> Result<&TaxonomyEntry, TaxonomyError> {
        self.get(class)
            .ok_or_else(|| TaxonomyError::NotFound(class.to_string()))
    }

    pub fn get(&self, class: &str) -> Option<&TaxonomyEntry> {
        self.by_class.get(&normalize(class)).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, class: &str) -> bool {
        self.by_class.contains_key(&normalize(class))
    }

    /// Classes sharing the attribute value `key`, sorted.
    pub fn group_members(&self, key: GroupKey) -> Vec<String> {
        let mut members: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.in_group(key))
            .map(|e| e.class.clone())
            .collect();
        members.sort_unstable();
        members
    }

    pub fn document(&self) -> TaxonomyDocument<'_> {
        TaxonomyDocument {
            entries: self.entries.iter().collect(),
            aliases: &self.aliases,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn bundled_counts() {
        let tax = Taxonomy::bundled();
        assert_eq!(tax.len(), 22);
        let count = |r| tax.entries().iter().filter(|e| e.risk == r).count();
        assert_eq!(count(RiskLevel::High), 4);
        assert_eq!(count(RiskLevel::Medium), 12);
        assert_eq!(count(RiskLevel::Low), 6);
    }

    #[test]
    fn empty_document_is_valid() {
        let tax = Taxonomy::from_json(r#"{"entries": [], "aliases": {}}"#).unwrap();
        assert!(tax.is_empty());
        assert_eq!(tax.canonicalize("person"), None);
    }

    #[test]
    fn dangling_alias_rejected() {
        let doc = r#"{"entries": [{"class":"person","risk":"High","space":"Personal","type":"PersonalMarker"}],
                     "aliases": {"ring": "jewelry"}}"#;
        match Taxonomy::from_json(doc) {
            Err(TaxonomyError::Validation { entry, .. }) => assert_eq!(entry, "ring"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_class_rejected() {
        let doc = r#"{"entries": [
            {"class":"book","risk":"Low","space":"Office","type":"Appendences"},
            {"class":"Book ","risk":"Low","space":"Office","type":"Appendences"}]}"#;
        assert!(matches!(
            Taxonomy::from_json(doc),
            Err(TaxonomyError::Validation { .. })
        ));
    }

    #[test]
    fn unknown_enum_value_names_entry() {
        let doc = r#"{"entries": [{"class":"book","risk":"Extreme","space":"Office","type":"Appendences"}]}"#;
        let err = Taxonomy::from_json(doc).unwrap_err();
        assert!(err.to_string().contains("book"), "{err}");
        assert!(err.to_string().contains("Extreme"), "{err}");
    }

    #[test]
    fn malformed_document() {
        assert!(matches!(
            Taxonomy::from_json("{\"entries\": 3}"),
            Err(TaxonomyError::Parse(_))
        ));
    }

    #[test]
    fn canonicalize_examples() {
        let tax = Taxonomy::bundled();
        assert_eq!(tax.canonicalize("cellular telephone"), Some("mobile phone"));
        assert_eq!(tax.canonicalize("cell phone"), Some("mobile phone"));
        assert_eq!(tax.canonicalize("person"), Some("person"));
        assert_eq!(tax.canonicalize("  Woman "), Some("person"));
        assert_eq!(tax.canonicalize("identity card"), Some("ID card"));
        assert_eq!(tax.canonicalize("id card"), Some("ID card"));
        assert_eq!(tax.canonicalize("beer"), Some("drunk"));
        assert_eq!(tax.canonicalize("coffee mug"), None);
    }

    #[test]
    fn training_labels_all_map() {
        let tax = Taxonomy::bundled();
        for label in [
            "person", "cell phone", "book", "ring", "bracelet", "bra", "halter top", "pantyhose",
            "pajamas", "monitor", "laptop", "badge", "identity card", "toilet", "urinal",
            "checkbook", "file cabinet", "medicine", "license plate", "underwear", "swimsuit", "tv",
        ] {
            assert!(tax.canonicalize(label).is_some(), "{label} unmapped");
        }
    }

    #[test]
    fn lookup_examples() {
        let tax = Taxonomy::bundled();
        let u = tax.lookup("underwear").unwrap();
        assert_eq!(
            (u.risk, u.space, u.type_group),
            (RiskLevel::High, SpatialGroup::Personal, TypeGroup::Clothes)
        );
        let m = tax.lookup("medicine").unwrap();
        assert_eq!(
            (m.risk, m.space, m.type_group),
            (RiskLevel::High, SpatialGroup::Living, TypeGroup::Others)
        );
        assert!(matches!(tax.lookup("doorknob"), Err(TaxonomyError::NotFound(_))));
    }

    #[test]
    fn wheelchair_bath_is_bathroom() {
        let tax = Taxonomy::bundled();
        assert_eq!(tax.lookup("wheelchair").unwrap().space, SpatialGroup::Bathroom);
    }

    #[test]
    fn group_member_examples() {
        let tax = Taxonomy::bundled();
        assert_eq!(
            tax.group_members(GroupKey::Sensitivity(RiskLevel::High)),
            set(&["person", "underwear", "jewelry", "medicine"])
        );
        assert_eq!(
            tax.group_members(GroupKey::Spatial(SpatialGroup::Bathroom)),
            set(&["toilet", "wheelchair"])
        );
        assert_eq!(
            tax.group_members(GroupKey::Category(TypeGroup::Appendences)),
            set(&["file cabinet", "book"])
        );
    }

    #[test]
    fn groups_partition_each_dimension() {
        let tax = Taxonomy::bundled();
        for dim in Dimension::ALL {
            let mut seen: Vec<String> = GroupKey::all_in(dim)
                .into_iter()
                .flat_map(|k| tax.group_members(k))
                .collect();
            seen.sort();
            let before = seen.len();
            seen.dedup();
            assert_eq!(before, seen.len(), "{dim:?} groups overlap");
            assert_eq!(seen, set(&tax.classes()));
        }
    }

    #[test]
    fn alias_cannot_shadow_a_class() {
        let doc = r#"{"entries": [
            {"class":"book","risk":"Low","space":"Office","type":"Appendences"},
            {"class":"person","risk":"High","space":"Personal","type":"PersonalMarker"}],
            "aliases": {"book": "person"}}"#;
        assert!(Taxonomy::from_json(doc).is_err());
    }

    #[test]
    fn risk_order() {
        assert!(RiskLevel::High > RiskLevel::Medium && RiskLevel::Medium > RiskLevel::Low);
    }
}
