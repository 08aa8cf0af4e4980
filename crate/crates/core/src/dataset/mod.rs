//! Dataset model: severity classes, bounding boxes, image records, manifests,
//! group-wise splits and synthetic fixtures.

mod fixture;
mod manifest;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{generate_fixture, Fixture, FixtureSpec};
pub use manifest::{parse_manifest, serialize_manifest, summarize, ManifestSummary};
pub use split::{carve_validation, split_by_group, split_refs, DatasetSplit, RoiRef};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed manifest at line {line}: {message}")]
    MalformedManifest { line: usize, message: String },
    #[error("invalid box{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvalidBox { line: Option<usize>, message: String },
    #[error("unknown label {label:?} at line {line} (expected green, yellow or red)")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate image_id {0:?}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("need at least 2 distinct groups to split, found {0}")]
    TooFewGroups(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("no record matches the requested classes")]
    EmptyResult,
    #[error("invalid fixture spec: {0}")]
    InvalidSpec(String),
    #[error("cannot read image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Wound severity. The derived ordering is the severity order
/// Green < Yellow < Red.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityClass {
    Green,
    Yellow,
    Red,
}

impl SeverityClass {
    /// Canonical class-index order, used for every matrix and output vector.
    pub const ALL: [SeverityClass; 3] = [Self::Green, Self::Yellow, Self::Red];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Green => "green",
            Self::Yellow => "yellow",
            Self::Red => "red",
        }
    }

    /// Capitalised form used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Self::Green => "Green",
            Self::Yellow => "Yellow",
            Self::Red => "Red",
        }
    }
}

impl fmt::Display for SeverityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SeverityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" => Ok(Self::Green),
            "yellow" => Ok(Self::Yellow),
            "red" => Ok(Self::Red),
            other => Err(other.to_string()),
        }
    }
}

/// Axis-aligned box in source-image pixels, half-open: `[x_min, x_max) × [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    /// Checks `x_min < x_max` and `y_min < y_max`; coordinates must be non-negative.
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        let invalid = |message: String| DatasetError::InvalidBox { line: None, message };
        if x_min < 0 || y_min < 0 {
            return Err(invalid(format!(
                "negative origin in [{x_min},{y_min},{x_max},{y_max}]"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(invalid(format!(
                "empty extent in [{x_min},{y_min},{x_max},{y_max}]"
            )));
        }
        let to_u32 = |v: i64| u32::try_from(v).map_err(|_| invalid(format!("coordinate {v} too large")));
        Ok(Self {
            x_min: to_u32(x_min)?,
            y_min: to_u32(y_min)?,
            x_max: to_u32(x_max)?,
            y_max: to_u32(y_max)?,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self { x_min: 0, y_min: 0, x_max: width, y_max: height }
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= width && self.y_max <= height
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// One source photo and its wound boxes.
///
/// An empty `boxes` list marks a pre-cropped ROI-level row: the whole raster
/// is the region of interest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub path: PathBuf,
    pub label: SeverityClass,
    #[serde(default)]
    pub boxes: Vec<BoundingBox>,
    pub group_id: String,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, path: impl Into<PathBuf>, label: SeverityClass) -> Self {
        let image_id = image_id.into();
        Self {
            group_id: image_id.clone(),
            image_id,
            path: path.into(),
            label,
            boxes: Vec::new(),
        }
    }

    pub fn with_boxes(mut self, boxes: Vec<BoundingBox>) -> Self {
        self.boxes = boxes;
        self
    }

    pub fn with_group(mut self, group_id: impl Into<String>) -> Self {
        self.group_id = group_id.into();
        self
    }

    /// Number of ROIs this record contributes.
    pub fn roi_count(&self) -> usize {
        self.boxes.len().max(1)
    }

    /// Regions of interest resolved against the raster size.
    pub fn regions(&self, width: u32, height: u32) -> Vec<BoundingBox> {
        if self.boxes.is_empty() {
            vec![BoundingBox::full(width, height)]
        } else {
            self.boxes.clone()
        }
    }

    /// Checks every box against the referenced raster's dimensions.
    pub fn validate_dims(&self, width: u32, height: u32) -> Result<()> {
        for b in &self.boxes {
            if !b.fits(width, height) {
                return Err(DatasetError::InvalidBox {
                    line: None,
                    message: format!("{b} of {} exceeds the {width}x{height} raster", self.image_id),
                });
            }
        }
        Ok(())
    }
}

/// Record paired with its decoded raster.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub record: ImageRecord,
    pub raster: RgbImage,
}

impl LoadedImage {
    pub fn new(record: ImageRecord, raster: RgbImage) -> Result<Self> {
        record.validate_dims(raster.width(), raster.height())?;
        Ok(Self { record, raster })
    }

    pub fn regions(&self) -> Vec<BoundingBox> {
        self.record.regions(self.raster.width(), self.raster.height())
    }
}

/// Decodes every record's raster; relative paths resolve against `base_dir`.
pub fn load_images(records: &[ImageRecord], base_dir: &Path) -> Result<Vec<LoadedImage>> {
    records
        .iter()
        .map(|record| {
            let path = if record.path.is_absolute() {
                record.path.clone()
            } else {
                base_dir.join(&record.path)
            };
            let raster = image::open(&path)
                .map_err(|source| DatasetError::Image { path: path.clone(), source })?
                .to_rgb8();
            LoadedImage::new(record.clone(), raster)
        })
        .collect()
}

/// Per-class totals in canonical (Green, Yellow, Red) order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub green: usize,
    pub yellow: usize,
    pub red: usize,
}

impl ClassCounts {
    pub fn get(&self, class: SeverityClass) -> usize {
        match class {
            SeverityClass::Green => self.green,
            SeverityClass::Yellow => self.yellow,
            SeverityClass::Red => self.red,
        }
    }

    pub fn add(&mut self, class: SeverityClass, n: usize) {
        match class {
            SeverityClass::Green => self.green += n,
            SeverityClass::Yellow => self.yellow += n,
            SeverityClass::Red => self.red += n,
        }
    }

    pub fn total(&self) -> usize {
        self.green + self.yellow + self.red
    }
}

impl fmt::Display for ClassCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "green={} yellow={} red={} total={}",
            self.green,
            self.yellow,
            self.red,
            self.total()
        )
    }
}

pub fn class_counts(records: &[ImageRecord]) -> Result<ClassCounts> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut counts = ClassCounts::default();
    for r in records {
        counts.add(r.label, 1);
    }
    Ok(counts)
}

/// Keeps records whose label is in `keep`, preserving order.
pub fn filter_classes(records: &[ImageRecord], keep: &BTreeSet<SeverityClass>) -> Result<Vec<ImageRecord>> {
    let out: Vec<ImageRecord> = records.iter().filter(|r| keep.contains(&r.label)).cloned().collect();
    if out.is_empty() {
        return Err(DatasetError::EmptyResult);
    }
    Ok(out)
}

/// Which partition a sample belongs to once the validation carve is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Self::Train, Self::Val, Self::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
