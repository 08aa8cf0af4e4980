//! Backbone names, the registry, and the frozen convolutional feature
//! extractors behind each name.
//!
//! Full-size backbones (VGG, Inception, NASNet, ...) are represented by
//! compact convolutional surrogates that keep each network's pooled feature
//! width and conventional input resolution. Their weights load from a
//! weights cache directory when present; otherwise they are drawn from a
//! seed derived from the backbone name and kept frozen.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io;
use super::layers::{avg_pool2, global_avg_pool, relu_in_place, Conv2d, Tensor3};
use super::ModelError;
use crate::seed;

/// Environment variable naming the pretrained-weights cache directory.
pub const WEIGHTS_DIR_ENV: &str = "WOUNDSEV_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackboneName {
    Vgg16,
    Vgg19,
    InceptionV3,
    NasNetLarge,
    ResNet50,
    DenseNet201,
    Xception,
    MobileNetV2,
    InceptionResNetV2,
    ToySmall,
    /// Additional deterministic toy providers (`ToySmall-1`, `ToySmall-2`, ...),
    /// so multi-branch models can be built from distinct toy networks.
    ToyVariant(u8),
}

impl BackboneName {
    pub const NAMED: [BackboneName; 9] = [
        Self::Vgg16,
        Self::Vgg19,
        Self::InceptionV3,
        Self::NasNetLarge,
        Self::ResNet50,
        Self::DenseNet201,
        Self::Xception,
        Self::MobileNetV2,
        Self::InceptionResNetV2,
    ];

    pub fn is_toy(self) -> bool {
        matches!(self, Self::ToySmall | Self::ToyVariant(_))
    }
}

impl fmt::Display for BackboneName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Vgg16 => f.write_str("VGG16"),
            Self::Vgg19 => f.write_str("VGG19"),
            Self::InceptionV3 => f.write_str("InceptionV3"),
            Self::NasNetLarge => f.write_str("NasNetLarge"),
            Self::ResNet50 => f.write_str("ResNet50"),
            Self::DenseNet201 => f.write_str("DenseNet201"),
            Self::Xception => f.write_str("Xception"),
            Self::MobileNetV2 => f.write_str("MobileNetV2"),
            Self::InceptionResNetV2 => f.write_str("InceptionResNetV2"),
            Self::ToySmall => f.write_str("ToySmall"),
            Self::ToyVariant(n) => write!(f, "ToySmall-{n}"),
        }
    }
}

impl FromStr for BackboneName {
    type Err = ModelError;

    /// Case, spaces, dashes and underscores are ignored, so "NasNet large"
    /// and "Res Net 50" resolve.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        let name = match key.as_str() {
            "vgg16" => Self::Vgg16,
            "vgg19" => Self::Vgg19,
            "inceptionv3" => Self::InceptionV3,
            "nasnetlarge" => Self::NasNetLarge,
            "resnet50" => Self::ResNet50,
            "densenet201" => Self::DenseNet201,
            "xception" => Self::Xception,
            "mobilenetv2" => Self::MobileNetV2,
            "inceptionresnetv2" => Self::InceptionResNetV2,
            "toysmall" => Self::ToySmall,
            other => match other.strip_prefix("toysmall").and_then(|n| n.parse::<u8>().ok()) {
                Some(n) if n > 0 => Self::ToyVariant(n),
                _ => return Err(ModelError::UnknownBackbone(s.to_string())),
            },
        };
        Ok(name)
    }
}

impl TryFrom<String> for BackboneName {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackboneName> for String {
    fn from(n: BackboneName) -> Self {
        n.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Conv { out: usize, kernel: usize, stride: usize },
    Relu,
    Pool,
}

fn toy_stages(width: usize) -> Vec<Stage> {
    use Stage::*;
    vec![
        Conv { out: 8, kernel: 3, stride: 1 },
        Relu,
        Pool,
        Conv { out: 16, kernel: 3, stride: 1 },
        Relu,
        Pool,
        Conv { out: width, kernel: 1, stride: 1 },
        Relu,
    ]
}

fn surrogate_stages(width: usize) -> Vec<Stage> {
    use Stage::*;
    vec![
        Conv { out: 16, kernel: 3, stride: 2 },
        Relu,
        Pool,
        Conv { out: 32, kernel: 3, stride: 1 },
        Relu,
        Pool,
        Pool,
        Conv { out: width, kernel: 1, stride: 1 },
        Relu,
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackboneInfo {
    pub name: BackboneName,
    pub feature_width: usize,
    /// (width, height)
    pub input_dims: (u32, u32),
}

/// Where frozen backbone weights come from when no cached file exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightPolicy {
    /// Fall back to seeded random weights (with a warning for named backbones).
    #[default]
    AllowSeeded,
    /// Named backbones must load from the cache; toys are always seeded.
    RequireCached,
}

#[derive(Debug, Clone)]
pub struct BackboneRegistry {
    entries: Vec<BackboneInfo>,
    weights_dir: Option<PathBuf>,
    policy: WeightPolicy,
    weight_seed: u64,
}

impl Default for BackboneRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl BackboneRegistry {
    /// The nine named backbones plus `ToySmall` (64-d features, 64×64 input).
    /// The weights cache defaults to `$WOUNDSEV_WEIGHTS_DIR`.
    pub fn new() -> Self {
        use BackboneName::*;
        let named = [
            (Vgg16, 512, 224),
            (Vgg19, 512, 224),
            (InceptionV3, 2048, 299),
            (NasNetLarge, 4032, 331),
            (ResNet50, 2048, 224),
            (DenseNet201, 1920, 224),
            (Xception, 2048, 299),
            (MobileNetV2, 1280, 224),
            (InceptionResNetV2, 1536, 299),
        ];
        let mut entries: Vec<BackboneInfo> = named
            .into_iter()
            .map(|(name, feature_width, side)| BackboneInfo { name, feature_width, input_dims: (side, side) })
            .collect();
        entries.push(BackboneInfo { name: ToySmall, feature_width: 64, input_dims: (64, 64) });
        Self {
            entries,
            weights_dir: std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from),
            policy: WeightPolicy::default(),
            weight_seed: 0,
        }
    }

    pub fn with_weights_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.weights_dir = dir;
        self
    }

    pub fn with_policy(mut self, policy: WeightPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn weights_dir(&self) -> Option<&Path> {
        self.weights_dir.as_deref()
    }

    /// Registers (or replaces) a toy provider.
    pub fn register_toy(&mut self, name: BackboneName, feature_width: usize, input_side: u32) -> Result<(), ModelError> {
        if !name.is_toy() {
            return Err(ModelError::InvalidSpec(format!("{name} is not a toy backbone")));
        }
        if feature_width == 0 || input_side == 0 {
            return Err(ModelError::InvalidSpec("toy width and input side must be positive".into()));
        }
        let info = BackboneInfo { name, feature_width, input_dims: (input_side, input_side) };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = info,
            None => self.entries.push(info),
        }
        Ok(())
    }

    pub fn list(&self) -> &[BackboneInfo] {
        &self.entries
    }

    pub fn info(&self, name: BackboneName) -> Result<&BackboneInfo, ModelError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ModelError::UnknownBackbone(name.to_string()))
    }

    pub fn instantiate(&self, name: BackboneName) -> Result<ConvBackbone, ModelError> {
        let info = self.info(name)?.clone();
        let stages = if name.is_toy() { toy_stages(info.feature_width) } else { surrogate_stages(info.feature_width) };
        let mut backbone = ConvBackbone::seeded(&info, &stages, seed::derive_seed(self.weight_seed, &name.to_string()));
        if name.is_toy() {
            return Ok(backbone);
        }
        let cached = self.weights_dir.as_ref().map(|d| d.join(name.to_string())).filter(|d| d.is_dir());
        match (cached, self.policy) {
            (Some(dir), _) => {
                let blobs = io::read_blob_dir(&dir)?;
                backbone.load_blobs(&blobs)?;
            }
            (None, WeightPolicy::RequireCached) => return Err(ModelError::WeightsUnavailable(name.to_string())),
            (None, WeightPolicy::AllowSeeded) => {
                log::warn!("no cached weights for {name}; using seeded random frozen weights");
            }
        }
        Ok(backbone)
    }
}

/// The registry's backbones as (name, feature width, default input dims).
pub fn list_backbones() -> Vec<(BackboneName, usize, (u32, u32))> {
    BackboneRegistry::new().list().iter().map(|e| (e.name, e.feature_width, e.input_dims)).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv(Conv2d),
    Relu,
    Pool,
}

/// Frozen feature extractor: convolutions, then global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBackbone {
    pub name: BackboneName,
    pub input_dims: (u32, u32),
    ops: Vec<Op>,
    feature_width: usize,
}

impl ConvBackbone {
    fn seeded(info: &BackboneInfo, stages: &[Stage], seed: u64) -> Self {
        let mut channels = 3;
        let mut conv_index = 0;
        let ops = stages
            .iter()
            .map(|s| match *s {
                Stage::Conv { out, kernel, stride } => {
                    let id = format!("{}/conv{conv_index}", info.name);
                    conv_index += 1;
                    let conv = Conv2d::he_init(id, channels, out, kernel, stride, seed);
                    channels = out;
                    Op::Conv(conv)
                }
                Stage::Relu => Op::Relu,
                Stage::Pool => Op::Pool,
            })
            .collect();
        Self { name: info.name, input_dims: info.input_dims, ops, feature_width: info.feature_width }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn with_input_dims(mut self, dims: (u32, u32)) -> Self {
        self.input_dims = dims;
        self
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.ops.iter().filter_map(|op| match op {
            Op::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv2d> {
        self.ops.iter_mut().filter_map(|op| match op {
            Op::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn load_blobs(&mut self, blobs: &std::collections::BTreeMap<String, io::Blob>) -> Result<(), ModelError> {
        for conv in self.convs_mut() {
            io::assign_conv(conv, blobs)?;
        }
        Ok(())
    }

    /// Pooled feature vector for an input already at `input_dims`.
    pub fn features(&self, input: &Tensor3) -> Result<Vec<f64>, ModelError> {
        let (w, h) = self.input_dims;
        if input.channels != 3 || input.width != w as usize || input.height != h as usize {
            return Err(ModelError::ShapeMismatch(format!(
                "{} expects 3x{h}x{w}, got {}x{}x{}",
                self.name, input.channels, input.height, input.width
            )));
        }
        let mut x = input.clone();
        for op in &self.ops {
            match op {
                Op::Conv(c) => x = c.forward(&x),
                Op::Relu => relu_in_place(&mut x),
                Op::Pool => x = avg_pool2(&x),
            }
        }
        Ok(global_avg_pool(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for info in BackboneRegistry::new().list() {
            assert_eq!(info.name.to_string().parse::<BackboneName>().unwrap(), info.name);
        }
        assert_eq!("NasNet large".parse::<BackboneName>().unwrap(), BackboneName::NasNetLarge);
        assert_eq!("Res Net 50".parse::<BackboneName>().unwrap(), BackboneName::ResNet50);
        assert_eq!("DenseNet 201".parse::<BackboneName>().unwrap(), BackboneName::DenseNet201);
        assert_eq!("ToySmall-3".parse::<BackboneName>().unwrap(), BackboneName::ToyVariant(3));
        assert!("AlexNet".parse::<BackboneName>().is_err());
        assert!("ToySmall-0".parse::<BackboneName>().is_err());
    }

    #[test]
    fn registry_contents() {
        let listed = list_backbones();
        assert_eq!(listed.len(), 10);
        for name in BackboneName::NAMED {
            assert!(listed.iter().any(|(n, _, _)| *n == name), "{name} missing");
        }
        assert!(listed.iter().any(|(n, w, d)| *n == BackboneName::ToySmall && *w == 64 && *d == (64, 64)));
    }

    #[test]
    fn toy_feature_width_matches_forward() {
        let reg = BackboneRegistry::new().with_weights_dir(None);
        let b = reg.instantiate(BackboneName::ToySmall).unwrap();
        let f = b.features(&Tensor3::zeros(3, 64, 64)).unwrap();
        assert_eq!(f.len(), 64);
        assert!(matches!(b.features(&Tensor3::zeros(3, 32, 64)), Err(ModelError::ShapeMismatch(_))));
    }

    #[test]
    fn strict_policy_without_cache() {
        let reg = BackboneRegistry::new().with_weights_dir(None).with_policy(WeightPolicy::RequireCached);
        assert!(matches!(reg.instantiate(BackboneName::Vgg19), Err(ModelError::WeightsUnavailable(_))));
        assert!(reg.instantiate(BackboneName::ToySmall).is_ok());
    }

    #[test]
    fn unregistered_variant() {
        let reg = BackboneRegistry::new();
        assert!(matches!(reg.instantiate(BackboneName::ToyVariant(2)), Err(ModelError::UnknownBackbone(_))));
    }

    #[test]
    fn seeded_weights_are_stable_and_distinct() {
        let mut reg = BackboneRegistry::new().with_weights_dir(None);
        reg.register_toy(BackboneName::ToyVariant(1), 64, 64).unwrap();
        let a = reg.instantiate(BackboneName::ToySmall).unwrap();
        assert_eq!(a, reg.instantiate(BackboneName::ToySmall).unwrap());
        let b = reg.instantiate(BackboneName::ToyVariant(1)).unwrap();
        assert_ne!(a.convs().next().unwrap().weights, b.convs().next().unwrap().weights);
    }
}
