//! Model zoo: single transfer-learning backbone, two-backbone stacked model,
//! and the four-branch multi-zoom network.
//!
//! Every family follows the same transfer workflow: take pretrained backbone
//! layers, freeze them, and train new dense layers on top. Each branch's
//! pooled features are concatenated (in branch order) before the head.

mod backbone;
mod head;
pub mod io;
pub mod layers;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use backbone::{list_backbones, BackboneInfo, BackboneName, BackboneRegistry, ConvBackbone, WeightPolicy, WEIGHTS_DIR_ENV};
pub use head::{softmax, Head, HeadGrads, Trace};
use layers::Tensor3;

use crate::roi::resize_for_backbone;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown backbone {0:?}")]
    UnknownBackbone(String),
    #[error("pretrained weights for {0} are not available")]
    WeightsUnavailable(String),
    #[error("backbone {0} appears more than once; branch layer names must be unique")]
    DuplicateBackbone(BackboneName),
    #[error("expected {expected} input raster(s), got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unfrozen backbones are not supported; set freeze_base = true")]
    UnfrozenBackbone,
    #[error("model artifact does not match its spec: {0}")]
    ArtifactMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Single,
    Stacked2,
    Multizoom4,
}

impl ModelFamily {
    pub fn branch_count(self) -> usize {
        match self {
            Self::Single => 1,
            Self::Stacked2 => 2,
            Self::Multizoom4 => 4,
        }
    }

    /// Rasters expected per prediction (stacked models fan one image out).
    pub fn input_arity(self) -> usize {
        match self {
            Self::Multizoom4 => 4,
            _ => 1,
        }
    }

    /// Fixed hidden dense depth, if the family prescribes one.
    pub fn head_depth(self) -> Option<usize> {
        match self {
            Self::Single => None,
            Self::Stacked2 => Some(4),
            Self::Multizoom4 => Some(5),
        }
    }

    fn width_cap(self) -> usize {
        match self {
            Self::Multizoom4 => 2048,
            _ => 1024,
        }
    }
}

pub const DEFAULT_SINGLE_HEAD: [usize; 1] = [256];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub backbones: Vec<BackboneName>,
    pub num_classes: usize,
    /// Hidden dense widths; empty for stacked/multi-zoom means the default taper.
    #[serde(default)]
    pub head: Vec<usize>,
    #[serde(default = "default_true")]
    pub freeze_base: bool,
    /// Per-branch (width, height); empty means the registry defaults.
    #[serde(default)]
    pub input_dims: Vec<(u32, u32)>,
    #[serde(default)]
    pub init_seed: u64,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn single(backbone: BackboneName, num_classes: usize) -> Self {
        Self::new(ModelFamily::Single, vec![backbone], num_classes, DEFAULT_SINGLE_HEAD.to_vec())
    }

    pub fn stacked2(a: BackboneName, b: BackboneName, num_classes: usize) -> Self {
        Self::new(ModelFamily::Stacked2, vec![a, b], num_classes, Vec::new())
    }

    pub fn multizoom4(branches: [BackboneName; 4], num_classes: usize) -> Self {
        Self::new(ModelFamily::Multizoom4, branches.to_vec(), num_classes, Vec::new())
    }

    fn new(family: ModelFamily, backbones: Vec<BackboneName>, num_classes: usize, head: Vec<usize>) -> Self {
        Self { family, backbones, num_classes, head, freeze_base: true, input_dims: Vec::new(), init_seed: 0 }
    }

    pub fn with_head(mut self, head: Vec<usize>) -> Self {
        self.head = head;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn with_input_dims(mut self, dims: Vec<(u32, u32)>) -> Self {
        self.input_dims = dims;
        self
    }

    /// Checks the structural rules that do not need the registry.
    pub fn validate(&self) -> Result<(), ModelError> {
        let expected = self.family.branch_count();
        if self.backbones.len() != expected {
            return Err(ModelError::InvalidSpec(format!(
                "{:?} needs {expected} backbone(s), got {}",
                self.family,
                self.backbones.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for b in &self.backbones {
            if !seen.insert(*b) {
                return Err(ModelError::DuplicateBackbone(*b));
            }
        }
        if !(2..=3).contains(&self.num_classes) {
            return Err(ModelError::InvalidSpec(format!("num_classes must be 2 or 3, got {}", self.num_classes)));
        }
        if !self.freeze_base {
            return Err(ModelError::UnfrozenBackbone);
        }
        if self.head.contains(&0) {
            return Err(ModelError::InvalidSpec("head widths must be positive".into()));
        }
        if let (Some(depth), false) = (self.family.head_depth(), self.head.is_empty()) {
            if self.head.len() != depth {
                return Err(ModelError::InvalidSpec(format!(
                    "{:?} heads have exactly {depth} dense layers, got {}",
                    self.family,
                    self.head.len()
                )));
            }
        }
        if !self.input_dims.is_empty() && self.input_dims.len() != expected {
            return Err(ModelError::InvalidSpec("input_dims needs one entry per backbone".into()));
        }
        if self.input_dims.iter().any(|&(w, h)| w == 0 || h == 0) {
            return Err(ModelError::InvalidSpec("input dims must be positive".into()));
        }
        Ok(())
    }

    /// Short model descriptor used in reports, e.g. `VGG19`,
    /// `VGG19+NasNetLarge`, `Z0: VGG19; Z1: InceptionV3; ...`.
    pub fn descriptor(&self) -> String {
        match self.family {
            ModelFamily::Single | ModelFamily::Stacked2 => {
                self.backbones.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("+")
            }
            ModelFamily::Multizoom4 => self
                .backbones
                .iter()
                .enumerate()
                .map(|(i, b)| format!("Z{i}: {b}"))
                .collect::<Vec<_>>()
                .join("; "),
        }
    }
}

/// Halving taper from `min(cap, largest power of two <= concat)`, floored at
/// the class count.
pub fn default_head(family: ModelFamily, concat_width: usize, num_classes: usize) -> Vec<usize> {
    match family.head_depth() {
        None => DEFAULT_SINGLE_HEAD.to_vec(),
        Some(depth) => {
            let pow2 = if concat_width == 0 { 1 } else { 1usize << (usize::BITS - 1 - concat_width.leading_zeros()) };
            let mut width = pow2.min(family.width_cap());
            (0..depth)
                .map(|_| {
                    let w = width.max(num_classes);
                    width /= 2;
                    w
                })
                .collect()
        }
    }
}

/// A built model: frozen branches plus a trainable head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    spec: ModelSpec,
    branches: Vec<ConvBackbone>,
    head: Head,
}

pub fn build(registry: &BackboneRegistry, spec: &ModelSpec) -> Result<ModelHandle, ModelError> {
    spec.validate()?;
    let mut branches = Vec::with_capacity(spec.backbones.len());
    for (i, &name) in spec.backbones.iter().enumerate() {
        let mut b = registry.instantiate(name)?;
        if let Some(&dims) = spec.input_dims.get(i) {
            b = b.with_input_dims(dims);
        }
        branches.push(b);
    }
    let concat: usize = branches.iter().map(|b| b.feature_width()).sum();
    let mut resolved = spec.clone();
    if resolved.head.is_empty() && spec.family != ModelFamily::Single {
        resolved.head = default_head(spec.family, concat, spec.num_classes);
    }
    resolved.input_dims = branches.iter().map(|b| b.input_dims).collect();
    let head = Head::new(concat, &resolved.head, spec.num_classes, spec.init_seed);
    Ok(ModelHandle { spec: resolved, branches, head })
}

pub fn build_single(
    registry: &BackboneRegistry,
    backbone: BackboneName,
    num_classes: usize,
    head: Vec<usize>,
) -> Result<ModelHandle, ModelError> {
    build(registry, &ModelSpec::single(backbone, num_classes).with_head(head))
}

pub fn build_stacked2(
    registry: &BackboneRegistry,
    a: BackboneName,
    b: BackboneName,
    num_classes: usize,
) -> Result<ModelHandle, ModelError> {
    build(registry, &ModelSpec::stacked2(a, b, num_classes))
}

pub fn build_multizoom4(
    registry: &BackboneRegistry,
    branches: [BackboneName; 4],
    num_classes: usize,
) -> Result<ModelHandle, ModelError> {
    build(registry, &ModelSpec::multizoom4(branches, num_classes))
}

/// Class probabilities for one input (one raster, or four for multi-zoom).
pub fn predict(handle: &ModelHandle, rasters: &[RgbImage]) -> Result<Vec<f64>, ModelError> {
    handle.predict(rasters)
}

impl ModelHandle {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn branches(&self) -> &[ConvBackbone] {
        &self.branches
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.feature_width()).collect()
    }

    pub fn feature_width(&self) -> usize {
        self.branch_widths().iter().sum()
    }

    /// Number of trainable dense layers between the features and the
    /// softmax output layer.
    pub fn hidden_dense_count(&self) -> usize {
        self.head.layers().len() - 1
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Head {
        &mut self.head
    }

    pub fn set_head(&mut self, head: Head) -> Result<(), ModelError> {
        let same_shape = head.layers().len() == self.head.layers().len()
            && head
                .layers()
                .iter()
                .zip(self.head.layers())
                .all(|(a, b)| a.id == b.id && a.inputs == b.inputs && a.outputs == b.outputs);
        if !same_shape {
            return Err(ModelError::ShapeMismatch("replacement head has a different layout".into()));
        }
        self.head = head;
        Ok(())
    }

    pub fn with_head(&self, head: Head) -> Result<ModelHandle, ModelError> {
        let mut h = self.clone();
        h.set_head(head)?;
        Ok(h)
    }

    pub(crate) fn branches_mut(&mut self) -> &mut [ConvBackbone] {
        &mut self.branches
    }

    /// Layer ids that training may update (head layers only).
    pub fn trainable_layers(&self) -> Vec<String> {
        self.head.layers().iter().map(|l| l.id.clone()).collect()
    }

    pub fn frozen_layers(&self) -> Vec<String> {
        self.branches.iter().flat_map(|b| b.convs().map(|c| c.id.clone())).collect()
    }

    /// All parameter tensors as (layer id, weights, bias).
    pub fn parameters(&self) -> Vec<(&str, &[f64], &[f64])> {
        let convs = self.branches.iter().flat_map(|b| b.convs()).map(|c| (c.id.as_str(), &c.weights[..], &c.bias[..]));
        let dense = self.head.layers().iter().map(|l| (l.id.as_str(), &l.weights[..], &l.bias[..]));
        convs.chain(dense).collect()
    }

    /// SHA-256 of each layer's little-endian parameter bytes.
    pub fn layer_checksums(&self) -> BTreeMap<String, String> {
        self.parameters()
            .into_iter()
            .map(|(id, w, b)| {
                let mut hasher = Sha256::new();
                for v in w.iter().chain(b) {
                    hasher.update(v.to_le_bytes());
                }
                let digest = hasher.finalize();
                (id.to_string(), digest.iter().map(|b| format!("{b:02x}")).collect())
            })
            .collect()
    }

    /// Resizes the input raster(s) to each branch's resolution.
    pub fn prepare_inputs(&self, rasters: &[RgbImage]) -> Result<Vec<Tensor3>, ModelError> {
        let arity = self.spec.family.input_arity();
        if rasters.len() != arity {
            return Err(ModelError::ArityMismatch { expected: arity, got: rasters.len() });
        }
        Ok(self
            .branches
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let src = if arity == 1 { &rasters[0] } else { &rasters[i] };
                Tensor3::from_rgb(&resize_for_backbone(src, b.input_dims))
            })
            .collect())
    }

    /// Concatenated pooled features; one tensor per branch at its input dims.
    pub fn extract_features(&self, inputs: &[Tensor3]) -> Result<Vec<f64>, ModelError> {
        if inputs.len() != self.branches.len() {
            return Err(ModelError::ArityMismatch { expected: self.branches.len(), got: inputs.len() });
        }
        let mut out = Vec::with_capacity(self.feature_width());
        for (b, x) in self.branches.iter().zip(inputs) {
            out.extend(b.features(x)?);
        }
        Ok(out)
    }

    pub fn features_for(&self, rasters: &[RgbImage]) -> Result<Vec<f64>, ModelError> {
        self.extract_features(&self.prepare_inputs(rasters)?)
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<Vec<f64>, ModelError> {
        if features.len() != self.head.input_width() {
            return Err(ModelError::ShapeMismatch(format!(
                "head expects {} features, got {}",
                self.head.input_width(),
                features.len()
            )));
        }
        Ok(self.head.probabilities(features))
    }

    pub fn forward(&self, inputs: &[Tensor3]) -> Result<Vec<f64>, ModelError> {
        self.predict_features(&self.extract_features(inputs)?)
    }

    pub fn predict(&self, rasters: &[RgbImage]) -> Result<Vec<f64>, ModelError> {
        self.predict_features(&self.features_for(rasters)?)
    }
}

impl fmt::Display for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {} -> concat {} -> {:?} -> softmax({})",
            self.spec.family,
            self.spec.descriptor(),
            self.feature_width(),
            self.head.hidden_widths(),
            self.spec.num_classes
        )
    }
}
