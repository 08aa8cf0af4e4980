//! `prepare` → `train` → `evaluate`.
//!
//! Layout under the experiment's output directory:
//!
//! ```text
//! prepared/index.csv                      one row per written sample
//! prepared/split.json                     split provenance (seed, ratio, groups)
//! prepared/train_val.csv, test.csv        image-level manifests per partition
//! prepared/<channel>/<split>/<class>/<source>_<box>_<transform>.png
//! model/checkpoints/<policy>/             spec.json + layers/*.bin
//! model/history.csv, history.json, config.toml
//! eval/confusion.md, eval_report.json, predictions.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use woundsev::dataset::{
    carve_validation, class_counts, filter_classes, load_images, parse_manifest, serialize_manifest, split_by_group,
    ClassCounts, ImageRecord, Partition, RoiRef,
};
use woundsev::model::{build, io, BackboneName, BackboneRegistry, ModelHandle, ModelSpec};
use woundsev::roi::{augment_set, prepare_refs, ChannelSelection};
use woundsev::train::{self, CheckpointPolicy, EvalReport, Example, TaskDescriptor, TrainingHistory};
use woundsev::{SeverityClass, TransformTag, ZoomChannel};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Side and feature width given to `ToySmall-N` providers named in a spec.
pub const TOY_VARIANT_SIDE: u32 = 64;
pub const TOY_VARIANT_WIDTH: usize = 64;

/// Default registry (weights cache from the environment) with any toy
/// variants the spec names registered.
pub fn registry_for(spec: &ModelSpec) -> Result<BackboneRegistry> {
    let mut registry = BackboneRegistry::new();
    for b in &spec.backbones {
        if let BackboneName::ToyVariant(_) = b {
            registry.register_toy(*b, TOY_VARIANT_WIDTH, TOY_VARIANT_SIDE)?;
        }
    }
    Ok(registry)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexRow {
    pub channel: ZoomChannel,
    pub split: Partition,
    pub key: String,
    pub label: SeverityClass,
    pub source_id: String,
    pub box_index: usize,
    pub transform: TransformTag,
    /// Relative to the prepared directory, '/'-separated.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub seed: u64,
    pub split_seed: u64,
    pub ratio: f64,
    pub val_fraction: f64,
    pub achieved_ratio: f64,
    pub channel: ChannelSelection,
    pub roi_counts: BTreeMap<Partition, ClassCounts>,
    pub groups: BTreeMap<Partition, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub dir: PathBuf,
    pub rows: Vec<IndexRow>,
    pub provenance: SplitProvenance,
}

impl PrepareSummary {
    /// Distinct sample keys per (channel, split).
    pub fn keys(&self, channel: ZoomChannel, split: Partition) -> BTreeSet<&str> {
        self.rows.iter().filter(|r| r.channel == channel && r.split == split).map(|r| r.key.as_str()).collect()
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn load_records(config: &ExperimentConfig) -> Result<Vec<ImageRecord>> {
    let text = fs::read_to_string(&config.manifest).map_err(CliError::io(&config.manifest))?;
    let records = parse_manifest(&text)?;
    let keep: BTreeSet<SeverityClass> = config.task.classes().into_iter().collect();
    let records = filter_classes(&records, &keep)?;
    for r in &records {
        if r.image_id.contains(['/', '\\']) || r.image_id.starts_with('.') {
            return Err(CliError::Data(format!("image id {:?} cannot be used in a file name", r.image_id)));
        }
    }
    Ok(records)
}

fn counts(refs: &[RoiRef]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for r in refs {
        c.add(r.label, 1);
    }
    c
}

fn groups(refs: &[RoiRef]) -> Vec<String> {
    refs.iter().map(|r| r.group_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Crops every ROI per channel and split, augments the training part, and
/// writes the samples plus index and provenance. The prepared directory is
/// rebuilt from scratch, so re-runs with the same seed are byte-identical.
pub fn cmd_prepare(config: &ExperimentConfig) -> Result<PrepareSummary> {
    let records = load_records(config)?;
    class_counts(&records)?;
    let base = config.manifest.parent().unwrap_or(Path::new(""));
    let images = load_images(&records, base)?;

    let split_seed = config.split_seed();
    let split = split_by_group(&records, config.split_ratio, split_seed)?;
    let (train_refs, val_refs) = carve_validation(&split.train_val, config.val_fraction, split_seed)?;
    let parts = [(Partition::Train, &train_refs), (Partition::Val, &val_refs), (Partition::Test, &split.test)];

    let dir = config.prepared_dir();
    reset_dir(&dir)?;

    let mut rows = Vec::new();
    for (partition, refs) in parts {
        for channel in config.channel.channels_for(partition) {
            let mut samples = prepare_refs(&images, refs, channel)?;
            if partition == Partition::Train {
                samples = augment_set(&samples)?;
            }
            let written: Vec<IndexRow> = samples
                .par_iter()
                .map(|s| {
                    let rel = format!("{}/{}/{}/{}.png", channel, partition, s.label, s.key());
                    let path = dir.join(&rel);
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
                    }
                    s.raster
                        .save_with_format(&path, image::ImageFormat::Png)
                        .map_err(|source| CliError::Image { path: path.clone(), source })?;
                    Ok(IndexRow {
                        channel,
                        split: partition,
                        key: s.key(),
                        label: s.label,
                        source_id: s.source_id.clone(),
                        box_index: s.box_index,
                        transform: s.transform,
                        path: rel,
                    })
                })
                .collect::<Result<_>>()?;
            rows.extend(written);
        }
    }
    rows.sort();
    write_index(&dir.join("index.csv"), &rows)?;

    let provenance = SplitProvenance {
        seed: config.seed,
        split_seed,
        ratio: config.split_ratio,
        val_fraction: config.val_fraction,
        achieved_ratio: split.achieved_ratio(),
        channel: config.channel,
        roi_counts: parts.iter().map(|(p, r)| (*p, counts(r))).collect(),
        groups: parts.iter().map(|(p, r)| (*p, groups(r))).collect(),
    };
    write(&dir.join("split.json"), to_json(&provenance))?;

    let assignment = split.group_assignment();
    let (tv, test): (Vec<ImageRecord>, Vec<ImageRecord>) =
        records.iter().cloned().partition(|r| assignment.get(&r.group_id).copied().unwrap_or(false));
    write(&dir.join("train_val.csv"), serialize_manifest(&tv)?)?;
    write(&dir.join("test.csv"), serialize_manifest(&test)?)?;
    write(&dir.join("config.toml"), config.to_toml()?)?;

    log::info!("prepared {} samples in {}", rows.len(), dir.display());
    Ok(PrepareSummary { dir, rows, provenance })
}

fn write_index(path: &Path, rows: &[IndexRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Data(format!("index row: {e}")))?;
    }
    write(path, w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
}

pub fn read_index(prepared: &Path) -> Result<Vec<IndexRow>> {
    let path = prepared.join("index.csv");
    if !path.is_file() {
        return Err(CliError::MissingPreparedData(prepared.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// One sample's rasters across the channels the model consumes.
#[derive(Debug, Clone)]
pub struct KeyedExample {
    pub key: String,
    pub example: Example,
}

/// Loads one split's examples in key order; each example holds one raster
/// per model channel.
pub fn load_examples(
    prepared: &Path,
    rows: &[IndexRow],
    split: Partition,
    channel: ChannelSelection,
    classes: &[SeverityClass],
) -> Result<Vec<KeyedExample>> {
    let channels = channel.channels_for(split);
    let mut by_key: BTreeMap<&str, Vec<Option<&IndexRow>>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.split == split) {
        if let Some(slot) = channels.iter().position(|&c| c == row.channel) {
            by_key.entry(&row.key).or_insert_with(|| vec![None; channels.len()])[slot] = Some(row);
        }
    }
    let entries: Vec<(&str, Vec<Option<&IndexRow>>)> = by_key.into_iter().collect();
    entries
        .par_iter()
        .map(|(key, slots)| {
            let rows: Vec<&IndexRow> = slots
                .iter()
                .map(|s| s.ok_or_else(|| CliError::Data(format!("sample {key} is missing a zoom channel"))))
                .collect::<Result<_>>()?;
            let label = classes
                .iter()
                .position(|&c| c == rows[0].label)
                .ok_or_else(|| CliError::Data(format!("sample {key} has label {} outside the task", rows[0].label)))?;
            let inputs = rows.iter().map(|r| load_png(&prepared.join(&r.path))).collect::<Result<Vec<RgbImage>>>()?;
            Ok(KeyedExample { key: key.to_string(), example: Example { inputs, label } })
        })
        .collect()
}

fn load_png(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|source| CliError::Image { path: path.to_path_buf(), source })?.to_rgb8())
}

fn examples(keyed: Vec<KeyedExample>) -> Vec<Example> {
    keyed.into_iter().map(|k| k.example).collect()
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub dir: PathBuf,
    pub history: TrainingHistory,
}

pub fn checkpoint_dir(config: &ExperimentConfig, policy: CheckpointPolicy) -> PathBuf {
    config.model_dir().join("checkpoints").join(policy.as_str())
}

/// Trains the configured model on the prepared train/val splits and saves
/// both checkpoints, the history, and the config used.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    config.validate()?;
    let spec = config.resolved_model();
    let registry = registry_for(&spec)?;
    let mut handle = build(&registry, &spec)?;

    let prepared = config.prepared_dir();
    let rows = read_index(&prepared)?;
    let classes = config.task.classes();
    let train_set = examples(load_examples(&prepared, &rows, Partition::Train, config.channel, &classes)?);
    let val_set = examples(load_examples(&prepared, &rows, Partition::Val, config.channel, &classes)?);
    log::info!("training {handle} on {} samples, validating on {}", train_set.len(), val_set.len());

    let outcome = train::train(&mut handle, &train_set, &val_set, &config.resolved_training())?;

    let dir = config.model_dir();
    reset_dir(&dir)?;
    for ck in &outcome.checkpoints {
        io::save(&handle.with_head(ck.head.clone())?, &checkpoint_dir(config, ck.policy))?;
    }
    write(&dir.join("history.csv"), outcome.history.to_csv())?;
    write(&dir.join("history.json"), to_json(&outcome.history))?;
    write(&dir.join("config.toml"), config.to_toml()?)?;
    Ok(TrainSummary { dir, history: outcome.history })
}

/// Loads a saved checkpoint and checks it was produced by this experiment.
pub fn load_checkpoint(config: &ExperimentConfig, policy: CheckpointPolicy) -> Result<ModelHandle> {
    let dir = checkpoint_dir(config, policy);
    if !dir.join("spec.json").is_file() {
        return Err(CliError::MissingArtifacts(dir));
    }
    let spec = config.resolved_model();
    let registry = registry_for(&spec)?;
    let handle = io::load(&registry, &dir)?;
    let saved = handle.spec();
    let ours = &spec;
    let same = saved.family == ours.family
        && saved.backbones == ours.backbones
        && saved.num_classes == ours.num_classes
        && saved.init_seed == ours.init_seed
        && (ours.head.is_empty() || saved.head == ours.head)
        && (ours.input_dims.is_empty() || saved.input_dims == ours.input_dims);
    if !same {
        return Err(CliError::ArtifactSpecMismatch(format!(
            "{} holds {} but the config describes {}",
            dir.display(),
            saved.descriptor(),
            ours.descriptor()
        )));
    }
    Ok(handle)
}

pub fn task_descriptor(config: &ExperimentConfig, model: ModelSpec, policy: Option<CheckpointPolicy>) -> TaskDescriptor {
    TaskDescriptor { classes: config.task.classes(), channel: config.channel, model, checkpoint: policy }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub dir: PathBuf,
    pub report: EvalReport,
}

/// Evaluates a checkpoint on the prepared test split. With `injected`
/// (sample key → predicted class) the model is not run and no artifacts
/// are needed; every test key must have a prediction.
pub fn cmd_evaluate(
    config: &ExperimentConfig,
    policy: Option<CheckpointPolicy>,
    injected: Option<&BTreeMap<String, SeverityClass>>,
) -> Result<EvalSummary> {
    config.validate()?;
    let policy = policy.unwrap_or(config.training.checkpoint_policy);
    let prepared = config.prepared_dir();
    let rows = read_index(&prepared)?;
    let classes = config.task.classes();
    let test = load_examples(&prepared, &rows, Partition::Test, config.channel, &classes)?;
    if test.is_empty() {
        return Err(train::TrainError::EmptyTestSet.into());
    }
    let gold: Vec<usize> = test.iter().map(|k| k.example.label).collect();

    let (model, predicted) = match injected {
        Some(map) => {
            let predicted = test
                .iter()
                .map(|k| {
                    let class = map.get(&k.key).ok_or_else(|| CliError::Data(format!("no prediction for sample {}", k.key)))?;
                    classes
                        .iter()
                        .position(|c| c == class)
                        .ok_or_else(|| CliError::Data(format!("prediction {class} for {} is outside the task", k.key)))
                })
                .collect::<Result<Vec<_>>>()?;
            (config.resolved_model(), predicted)
        }
        None => {
            let handle = load_checkpoint(config, policy)?;
            let test_examples: Vec<Example> = test.iter().map(|k| k.example.clone()).collect();
            (handle.spec().clone(), train::predict_all(&handle, &test_examples)?)
        }
    };

    let task = task_descriptor(config, model, Some(policy));
    let confusion = train::ConfusionMatrix::from_predictions(classes.clone(), &gold, &predicted)?;
    let report = EvalReport::from_confusion(task, confusion)?;

    let dir = config.eval_dir();
    write_eval(&dir, &report)?;
    let mut preds = String::from("key,gold,predicted\n");
    for (k, &p) in test.iter().zip(&predicted) {
        preds.push_str(&format!("{},{},{}\n", k.key, classes[k.example.label], classes[p]));
    }
    write(&dir.join("predictions.csv"), preds)?;
    Ok(EvalSummary { dir, report })
}

pub fn write_eval(dir: &Path, report: &EvalReport) -> Result<()> {
    write(&dir.join("confusion.md"), report.render_confusion())?;
    write(&dir.join("eval_report.json"), to_json(report))
}

/// Reads `key,predicted` (or `key,gold,predicted`) rows; a header row is
/// skipped.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, SeverityClass>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("key")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_err = |m: String| CliError::Parse { path: path.to_path_buf(), line: i + 1, message: m };
        let (key, pred) = match fields.as_slice() {
            [k, p] | [k, _, p] => (*k, *p),
            _ => return Err(parse_err(format!("expected 2 or 3 fields, got {}", fields.len()))),
        };
        let class: SeverityClass = pred.parse().map_err(parse_err)?;
        out.insert(key.to_string(), class);
    }
    Ok(out)
}
