//! Wound severity classification pipeline.
//!
//! Images of wounds are triaged into three severity classes (green, yellow,
//! red). The crate covers the full experiment path:
//!
//! - [`dataset`]: manifests, class counts, group-wise splits, synthetic fixtures.
//! - [`roi`]: ROI cropping, Z0–Z3 zoom-out padding, the ×6 augmentation scheme
//!   and backbone resizing.
//! - [`model`]: frozen-backbone transfer models (single, stacked pair,
//!   four-branch multi-zoom) over a backbone registry.
//! - [`train`]: Adam training with dual checkpointing, confusion matrices and
//!   accuracy / precision / recall.
//! - [`rubric`]: the photo-characteristics decision table as code.

pub mod dataset;
pub mod model;
pub mod roi;
pub mod rubric;
pub mod seed;
pub mod train;

pub use dataset::{BoundingBox, ImageRecord, SeverityClass};
pub use roi::{RoiSample, TransformTag, ZoomChannel};
