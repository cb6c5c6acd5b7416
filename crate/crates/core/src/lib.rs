//! Visual privacy middleware for head-worn camera streams.
//!
//! Detections are canonicalized against a privacy taxonomy, resolved
//! through a default-deny, group-based policy store, and occluded in every
//! frame before any downstream consumer sees it.

pub mod detect;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod sanitize;
pub mod synthetic;
pub mod taxonomy;

pub use detect::{BBox, ClassLabel, Detection, Detector, FixtureDetector, Tracker};
pub use policy::{
    AuditRecord, EventKind, GroupAction, InteractionEvent, Mode, PolicyStore, PolicyView,
    Resolution, SliderLevel, VisibilityState,
};
pub use sanitize::{Frame, Occluder, PatchCache};
pub use taxonomy::{Dimension, GroupKey, RiskLevel, SpatialGroup, Taxonomy, TypeGroup};
