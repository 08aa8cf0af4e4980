//! One experiment per TOML file.
//!
//! ```toml
//! manifest = "data/manifest.csv"
//! output_dir = "runs/vgg19-z0"
//! task = "multiclass3"            # or: task = { binary = ["green", "yellow"] }
//! channel = "Z0"                  # Z0..Z3 or "MultiZoom"
//! split_ratio = 0.8
//! val_fraction = 0.2
//! seed = 7
//!
//! [model]
//! family = "single"
//! backbones = ["VGG19"]
//! num_classes = 3
//!
//! [training]
//! epochs = 250
//! ```
//!
//! All randomness comes from `seed`: the split, validation carve, head
//! initialisation and batch shuffling each draw from their own derived
//! stream, so `model.init_seed` and `training.seed` must be left unset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use woundsev::model::{ModelFamily, ModelSpec};
use woundsev::roi::ChannelSelection;
use woundsev::seed::derive_seed;
use woundsev::train::{LossKind, TrainingConfig};
use woundsev::SeverityClass;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Multiclass3,
    Binary([SeverityClass; 2]),
}

impl Task {
    /// Class order used for label indices and confusion matrices.
    pub fn classes(self) -> Vec<SeverityClass> {
        match self {
            Self::Multiclass3 => SeverityClass::ALL.to_vec(),
            Self::Binary(pair) => {
                let mut v = pair.to_vec();
                v.sort();
                v
            }
        }
    }
}

fn default_ratio() -> f64 {
    0.8
}

fn default_val_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub task: Task,
    pub channel: ChannelSelection,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>, channel: ChannelSelection, model: ModelSpec) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            task: Task::Multiclass3,
            channel,
            split_ratio: default_ratio(),
            val_fraction: default_val_fraction(),
            seed: 0,
            model,
            training: TrainingConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    /// Reads, parses and validates a config file, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| toml_error(path, &text, &e))?;
        let base = std::path::absolute(path).map_err(CliError::io(path))?;
        let base = base.parent().unwrap_or(Path::new("/"));
        cfg.manifest = base.join(&cfg.manifest);
        cfg.output_dir = base.join(&cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let classes = self.task.classes();
        if let Task::Binary([a, b]) = self.task {
            if a == b {
                return bad(format!("binary task needs two different classes, got {a} twice"));
            }
        }
        if self.model.num_classes != classes.len() {
            return bad(format!(
                "task has {} classes but model.num_classes is {}",
                classes.len(),
                self.model.num_classes
            ));
        }
        if matches!(self.task, Task::Binary(_)) && self.training.loss_for(2) != LossKind::BinaryCrossentropy {
            return bad("binary tasks train with binary_crossentropy".into());
        }
        let multizoom_family = self.model.family == ModelFamily::Multizoom4;
        let multizoom_channel = self.channel == ChannelSelection::MultiZoom;
        if multizoom_family != multizoom_channel {
            return bad("the MultiZoom channel and the multizoom4 family go together".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.model.init_seed != 0 || self.training.seed != 0 {
            return bad("set the top-level seed; model.init_seed and training.seed are derived from it".into());
        }
        self.model.validate()?;
        self.training.validate(classes.len())?;
        Ok(())
    }

    pub fn resolved_model(&self) -> ModelSpec {
        self.model.clone().with_seed(derive_seed(self.seed, "init"))
    }

    pub fn resolved_training(&self) -> TrainingConfig {
        TrainingConfig { seed: derive_seed(self.seed, "shuffle"), ..self.training.clone() }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.output_dir.join("prepared")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join("model")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
}

/// Maps a TOML error to a `path:line: message` parse error.
pub fn toml_error(path: &Path, text: &str, err: &toml::de::Error) -> CliError {
    let line = err.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(1);
    CliError::Parse { path: path.to_path_buf(), line, message: err.message().to_string() }
}
