//! Model-ready samples: ROI cropping with Z0–Z3 zoom-out padding, the ×6
//! augmentation scheme, and resizing to a backbone's input resolution.

mod transform;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BoundingBox, LoadedImage, Partition, RoiRef, SeverityClass};

pub use transform::{apply_transform, apply_transform_with, resize_for_backbone, FillPolicy};

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("box {bbox} lies outside the {width}x{height} raster")]
    BoxOutOfRange { bbox: BoundingBox, width: u32, height: u32 },
    #[error("sample {source_id}#{box_index} already carries transform {transform}")]
    AlreadyAugmented { source_id: String, box_index: usize, transform: TransformTag },
    #[error("image {image_id} has no box #{box_index}")]
    MissingBox { image_id: String, box_index: usize },
    #[error("no image with id {0}")]
    MissingImage(String),
}

/// Zoom-out level; the padding is in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ZoomChannel {
    Z0,
    Z1,
    Z2,
    Z3,
}

impl ZoomChannel {
    pub const ALL: [ZoomChannel; 4] = [Self::Z0, Self::Z1, Self::Z2, Self::Z3];

    pub fn padding(self) -> u32 {
        match self {
            Self::Z0 => 0,
            Self::Z1 => 50,
            Self::Z2 => 100,
            Self::Z3 => 150,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Z0 => "Z0",
            Self::Z1 => "Z1",
            Self::Z2 => "Z2",
            Self::Z3 => "Z3",
        }
    }
}

impl fmt::Display for ZoomChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZoomChannel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown zoom channel {s:?}"))
    }
}

/// Channels an experiment consumes: one zoom level, or all four aligned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ChannelSelection {
    Single(ZoomChannel),
    MultiZoom,
}

impl ChannelSelection {
    /// Zoom-outs apply to training and validation data only; the test
    /// partition is cut at Z0 unless the model consumes all four channels.
    pub fn channels_for(self, partition: Partition) -> Vec<ZoomChannel> {
        match (self, partition) {
            (Self::MultiZoom, _) => ZoomChannel::ALL.to_vec(),
            (Self::Single(_), Partition::Test) => vec![ZoomChannel::Z0],
            (Self::Single(c), _) => vec![c],
        }
    }

    /// Channels fed to the model, in branch order.
    pub fn model_channels(self) -> Vec<ZoomChannel> {
        match self {
            Self::MultiZoom => ZoomChannel::ALL.to_vec(),
            Self::Single(c) => vec![c],
        }
    }
}

impl fmt::Display for ChannelSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single(c) => c.fmt(f),
            Self::MultiZoom => f.write_str("MultiZoom"),
        }
    }
}

impl FromStr for ChannelSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("multizoom") {
            Ok(Self::MultiZoom)
        } else {
            s.parse().map(Self::Single)
        }
    }
}

impl TryFrom<String> for ChannelSelection {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ChannelSelection> for String {
    fn from(c: ChannelSelection) -> Self {
        c.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformTag {
    Identity,
    HFlip,
    VFlip,
    Rot25,
    Rot45,
    Rot90,
}

impl TransformTag {
    pub const ALL: [TransformTag; 6] = [
        Self::Identity,
        Self::HFlip,
        Self::VFlip,
        Self::Rot25,
        Self::Rot45,
        Self::Rot90,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::HFlip => "hflip",
            Self::VFlip => "vflip",
            Self::Rot25 => "rot25",
            Self::Rot45 => "rot45",
            Self::Rot90 => "rot90",
        }
    }
}

impl fmt::Display for TransformTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown transform {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSample {
    pub source_id: String,
    pub box_index: usize,
    pub channel: ZoomChannel,
    pub transform: TransformTag,
    pub raster: RgbImage,
    pub label: SeverityClass,
}

impl RoiSample {
    /// `<source_id>_<boxidx>_<transform>`, unique within a channel and split.
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.source_id, self.box_index, self.transform)
    }
}

/// Extends each side by `padding` and clamps to `[0, width] × [0, height]`.
pub fn pad_box(bbox: BoundingBox, padding: u32, dims: (u32, u32)) -> BoundingBox {
    let (width, height) = dims;
    BoundingBox {
        x_min: bbox.x_min.saturating_sub(padding),
        y_min: bbox.y_min.saturating_sub(padding),
        x_max: bbox.x_max.saturating_add(padding).min(width),
        y_max: bbox.y_max.saturating_add(padding).min(height),
    }
}

pub fn crop(raster: &RgbImage, bbox: BoundingBox) -> Result<RgbImage, RoiError> {
    if !bbox.fits(raster.width(), raster.height()) {
        return Err(RoiError::BoxOutOfRange { bbox, width: raster.width(), height: raster.height() });
    }
    Ok(image::imageops::crop_imm(raster, bbox.x_min, bbox.y_min, bbox.width(), bbox.height()).to_image())
}

/// Cuts one ROI of `image` at the given zoom level.
pub fn extract_roi(image: &LoadedImage, box_index: usize, channel: ZoomChannel) -> Result<RoiSample, RoiError> {
    let regions = image.regions();
    let bbox = *regions.get(box_index).ok_or_else(|| RoiError::MissingBox {
        image_id: image.record.image_id.clone(),
        box_index,
    })?;
    let dims = image.raster.dimensions();
    if !bbox.fits(dims.0, dims.1) {
        return Err(RoiError::BoxOutOfRange { bbox, width: dims.0, height: dims.1 });
    }
    let padded = pad_box(bbox, channel.padding(), dims);
    Ok(RoiSample {
        source_id: image.record.image_id.clone(),
        box_index,
        channel,
        transform: TransformTag::Identity,
        raster: crop(&image.raster, padded)?,
        label: image.record.label,
    })
}

/// One sample per (record, box) pair at `channel`.
pub fn prepare_channel(images: &[LoadedImage], channel: ZoomChannel) -> Result<Vec<RoiSample>, RoiError> {
    let mut out = Vec::new();
    for image in images {
        for box_index in 0..image.regions().len() {
            out.push(extract_roi(image, box_index, channel)?);
        }
    }
    Ok(out)
}

/// Samples for an explicit list of ROI references (e.g. one split partition).
pub fn prepare_refs(images: &[LoadedImage], refs: &[RoiRef], channel: ZoomChannel) -> Result<Vec<RoiSample>, RoiError> {
    let by_id: std::collections::HashMap<&str, &LoadedImage> =
        images.iter().map(|i| (i.record.image_id.as_str(), i)).collect();
    refs.iter()
        .map(|r| {
            let image = by_id
                .get(r.image_id.as_str())
                .ok_or_else(|| RoiError::MissingImage(r.image_id.clone()))?;
            extract_roi(image, r.box_index, channel)
        })
        .collect()
}

/// Expands every un-augmented sample into its six transform variants.
pub fn augment_set(samples: &[RoiSample]) -> Result<Vec<RoiSample>, RoiError> {
    augment_set_with(samples, FillPolicy::default())
}

pub fn augment_set_with(samples: &[RoiSample], fill: FillPolicy) -> Result<Vec<RoiSample>, RoiError> {
    if let Some(s) = samples.iter().find(|s| s.transform != TransformTag::Identity) {
        return Err(RoiError::AlreadyAugmented {
            source_id: s.source_id.clone(),
            box_index: s.box_index,
            transform: s.transform,
        });
    }
    let mut out = Vec::with_capacity(samples.len() * TransformTag::ALL.len());
    for s in samples {
        for tag in TransformTag::ALL {
            out.push(RoiSample {
                transform: tag,
                raster: apply_transform_with(&s.raster, tag, fill),
                ..s.clone()
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageRecord;
    use image::Rgb;
    use proptest::prelude::*;

    fn bb(x0: u32, y0: u32, x1: u32, y1: u32) -> BoundingBox {
        BoundingBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 11 % 256) as u8, ((x + y) % 256) as u8]))
    }

    fn sample(id: &str, label: SeverityClass) -> RoiSample {
        RoiSample {
            source_id: id.into(),
            box_index: 0,
            channel: ZoomChannel::Z0,
            transform: TransformTag::Identity,
            raster: gradient(6, 4),
            label,
        }
    }

    #[test]
    fn zoom_paddings() {
        let p: Vec<u32> = ZoomChannel::ALL.iter().map(|c| c.padding()).collect();
        assert_eq!(p, vec![0, 50, 100, 150]);
    }

    #[test]
    fn pad_box_examples() {
        assert_eq!(pad_box(bb(100, 100, 200, 200), 50, (1000, 1000)), bb(50, 50, 250, 250));
        assert_eq!(pad_box(bb(10, 10, 90, 90), 50, (120, 120)), bb(0, 0, 120, 120));
        assert_eq!(pad_box(bb(3, 4, 9, 12), 0, (20, 20)), bb(3, 4, 9, 12));
    }

    #[test]
    fn crop_examples() {
        let r = gradient(9, 7);
        assert_eq!(crop(&r, BoundingBox::full(9, 7)).unwrap(), r);
        let one = crop(&r, bb(0, 0, 1, 1)).unwrap();
        assert_eq!(one.dimensions(), (1, 1));
        assert_eq!(one.get_pixel(0, 0), r.get_pixel(0, 0));
        assert!(matches!(crop(&r, bb(0, 0, 10, 7)), Err(RoiError::BoxOutOfRange { .. })));
    }

    #[test]
    fn prepare_two_boxes_and_z1_dims() {
        let record = ImageRecord::new("a", "a.png", SeverityClass::Red)
            .with_boxes(vec![bb(100, 100, 150, 180), bb(200, 210, 260, 250)]);
        let image = LoadedImage::new(record, gradient(400, 400)).unwrap();
        let z0 = prepare_channel(std::slice::from_ref(&image), ZoomChannel::Z0).unwrap();
        assert_eq!(z0.len(), 2);
        assert!(z0.iter().all(|s| s.transform == TransformTag::Identity && s.label == SeverityClass::Red));
        assert_eq!(z0[0].raster, crop(&image.raster, bb(100, 100, 150, 180)).unwrap());
        let z1 = prepare_channel(std::slice::from_ref(&image), ZoomChannel::Z1).unwrap();
        assert_eq!(z1[0].raster.dimensions(), (50 + 100, 80 + 100));
    }

    #[test]
    fn roi_level_record_uses_whole_raster() {
        let image = LoadedImage::new(ImageRecord::new("r", "r.png", SeverityClass::Green), gradient(30, 20)).unwrap();
        let s = prepare_channel(std::slice::from_ref(&image), ZoomChannel::Z3).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].raster, image.raster);
    }

    #[test]
    fn augment_counts() {
        let green: Vec<_> = (0..154).map(|i| sample(&format!("g{i}"), SeverityClass::Green)).collect();
        assert_eq!(augment_set(&green).unwrap().len(), 924);
        assert!(augment_set(&[]).unwrap().is_empty());

        let out = augment_set(&[sample("a", SeverityClass::Yellow)]).unwrap();
        let tags: Vec<_> = out.iter().map(|s| s.transform).collect();
        assert_eq!(tags, TransformTag::ALL.to_vec());
        assert!(out.iter().all(|s| s.label == SeverityClass::Yellow && s.source_id == "a"));
        assert!(matches!(augment_set(&out), Err(RoiError::AlreadyAugmented { .. })));
    }

    #[test]
    fn channel_selection_rules() {
        let single = ChannelSelection::Single(ZoomChannel::Z2);
        assert_eq!(single.channels_for(Partition::Train), vec![ZoomChannel::Z2]);
        assert_eq!(single.channels_for(Partition::Test), vec![ZoomChannel::Z0]);
        assert_eq!(ChannelSelection::MultiZoom.channels_for(Partition::Test).len(), 4);
        assert_eq!("multizoom".parse::<ChannelSelection>().unwrap(), ChannelSelection::MultiZoom);
        assert_eq!("z1".parse::<ChannelSelection>().unwrap(), ChannelSelection::Single(ZoomChannel::Z1));
    }

    fn arb_case() -> impl Strategy<Value = (BoundingBox, (u32, u32), u32, u32)> {
        (2u32..400, 2u32..400).prop_flat_map(|(w, h)| {
            (0..w - 1, 0..h - 1, Just((w, h)), 0u32..200, 0u32..200).prop_flat_map(|(x0, y0, dims, p1, p2)| {
                (x0 + 1..=dims.0, y0 + 1..=dims.1).prop_map(move |(x1, y1)| (bb(x0, y0, x1, y1), dims, p1.min(p2), p1.max(p2)))
            })
        })
    }

    proptest! {
        #[test]
        fn pad_box_properties((b, dims, p1, p2) in arb_case()) {
            let a = pad_box(b, p1, dims);
            let c = pad_box(b, p2, dims);
            prop_assert!(a.fits(dims.0, dims.1));
            prop_assert!(a.contains(&b));
            prop_assert!(c.contains(&a));
        }

        #[test]
        fn padded_crop_contains_plain_crop(w in 4u32..40, h in 4u32..40, pad in 0u32..20, seed in any::<u64>()) {
            let r = RgbImage::from_fn(w, h, |x, y| Rgb([(seed.wrapping_mul(x as u64 + 1) % 251) as u8, (seed.wrapping_add(y as u64 * 31) % 253) as u8, ((x * y) % 256) as u8]));
            let b = bb(w / 4, h / 4, w / 4 + w / 2, h / 4 + h / 2);
            let padded = pad_box(b, pad, (w, h));
            let outer = crop(&r, padded).unwrap();
            let inner = crop(&r, b).unwrap();
            let (dx, dy) = (b.x_min - padded.x_min, b.y_min - padded.y_min);
            for (x, y, px) in inner.enumerate_pixels() {
                prop_assert_eq!(outer.get_pixel(x + dx, y + dy), px);
            }
        }
    }
}
