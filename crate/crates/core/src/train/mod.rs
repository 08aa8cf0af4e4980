//! Training protocol and evaluation.
//!
//! Backbones are frozen, so each sample's pooled features are computed once
//! and the head is trained on them with Adam. After every epoch the head is
//! scored on the training and validation sets, and two checkpoints are kept:
//! best validation accuracy, and best mean of training and validation
//! accuracy (earliest epoch wins ties).

mod metrics;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use image::RgbImage;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    accuracy, format_percent, per_class_metrics, ConfusionMatrix, EvalReport, PerClassMetrics, TaskDescriptor,
};
pub use optim::Adam;

use crate::model::{Head, HeadGrads, ModelError, ModelHandle};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{loss} loss cannot train a {classes}-class model")]
    LossClassMismatch { loss: LossKind, classes: usize },
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("training set is empty")]
    EmptyTraining,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("training history is empty")]
    EmptyHistory,
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    MulticlassCrossentropy,
    BinaryCrossentropy,
}

impl LossKind {
    pub fn for_classes(num_classes: usize) -> Self {
        if num_classes == 2 {
            Self::BinaryCrossentropy
        } else {
            Self::MulticlassCrossentropy
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MulticlassCrossentropy => "multiclass_crossentropy",
            Self::BinaryCrossentropy => "binary_crossentropy",
        })
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Loss for one sample and its gradient with respect to the logits.
///
/// Binary cross-entropy is taken over the two softmax outputs
/// (`-½ Σ_k [y_k ln p_k + (1 - y_k) ln(1 - p_k)]`); with one-hot targets it
/// coincides with categorical cross-entropy, hence the shared gradient.
pub fn loss_and_grad(kind: LossKind, logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let log_p = log_softmax(logits);
    let loss = match kind {
        LossKind::MulticlassCrossentropy => -log_p[label],
        LossKind::BinaryCrossentropy => {
            debug_assert_eq!(logits.len(), 2);
            let mut acc = 0.0;
            for k in 0..2 {
                let log_one_minus = log_p[1 - k];
                acc += if k == label { log_p[k] } else { log_one_minus };
            }
            -acc / 2.0
        }
    };
    let grad = log_p
        .iter()
        .enumerate()
        .map(|(k, lp)| lp.exp() - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    BestValAccuracy,
    BestCombinedAccuracy,
}

impl CheckpointPolicy {
    pub const ALL: [CheckpointPolicy; 2] = [Self::BestValAccuracy, Self::BestCombinedAccuracy];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BestValAccuracy => "best_val_accuracy",
            Self::BestCombinedAccuracy => "best_combined_accuracy",
        }
    }

    fn score(self, e: &EpochRecord) -> f64 {
        match self {
            Self::BestValAccuracy => e.val_acc,
            Self::BestCombinedAccuracy => (e.train_acc + e.val_acc) / 2.0,
        }
    }
}

impl fmt::Display for CheckpointPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// `None` picks binary cross-entropy for two classes, multiclass otherwise.
    pub loss: Option<LossKind>,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint reported as the headline result; both are always kept.
    pub checkpoint_policy: CheckpointPolicy,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 250,
            optimizer: Optimizer::Adam,
            loss: None,
            batch_size: 32,
            seed: 0,
            checkpoint_policy: CheckpointPolicy::BestValAccuracy,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

impl TrainingConfig {
    pub fn loss_for(&self, num_classes: usize) -> LossKind {
        self.loss.unwrap_or_else(|| LossKind::for_classes(num_classes))
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        let loss = self.loss_for(num_classes);
        let ok = match loss {
            LossKind::BinaryCrossentropy => num_classes == 2,
            LossKind::MulticlassCrossentropy => num_classes >= 2,
        };
        if !ok {
            return Err(TrainError::LossClassMismatch { loss, classes: num_classes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub checkpoints: BTreeMap<CheckpointPolicy, usize>,
}

impl TrainingHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc);
        }
        out
    }
}

/// 1-based epoch with the best score under `policy`; earliest wins ties.
pub fn checkpoint_select(epochs: &[EpochRecord], policy: CheckpointPolicy) -> Result<usize, TrainError> {
    let mut best: Option<(usize, f64)> = None;
    for e in epochs {
        let s = policy.score(e);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((e.epoch, s));
        }
    }
    best.map(|(epoch, _)| epoch).ok_or(TrainError::EmptyHistory)
}

/// One model input (one raster, or four zoom channels) and its class index.
#[derive(Debug, Clone)]
pub struct Example {
    pub inputs: Vec<RgbImage>,
    pub label: usize,
}

/// Pre-extracted features and their class index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: CheckpointPolicy,
    pub epoch: usize,
    pub head: Head,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainingHistory,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainOutcome {
    pub fn checkpoint(&self, policy: CheckpointPolicy) -> &Checkpoint {
        self.checkpoints.iter().find(|c| c.policy == policy).expect("both policies are always checkpointed")
    }
}

/// Frozen-backbone features for every example, in input order.
pub fn extract_features(handle: &ModelHandle, examples: &[Example]) -> Result<Vec<FeatureExample>, TrainError> {
    examples
        .par_iter()
        .map(|ex| {
            if ex.label >= handle.num_classes() {
                return Err(TrainError::LabelOutOfRange { label: ex.label, classes: handle.num_classes() });
            }
            Ok(FeatureExample { features: handle.features_for(&ex.inputs)?, label: ex.label })
        })
        .collect()
}

/// Trains the head of `handle` in place. On return the handle holds the
/// final-epoch head; the checkpointed heads are in the outcome.
pub fn train(
    handle: &mut ModelHandle,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate(handle.num_classes())?;
    if val_set.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    let train_features = extract_features(handle, train_set)?;
    let val_features = extract_features(handle, val_set)?;
    train_on_features(handle.head_mut(), &train_features, &val_features, config)
}

/// Mean loss and accuracy of `head` over a feature set.
pub fn score_features(head: &Head, set: &[FeatureExample], loss: LossKind) -> (f64, f64) {
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    for ex in set {
        let logits = head.logits(&ex.features);
        total_loss += loss_and_grad(loss, &logits, ex.label).0;
        if argmax(&logits) == ex.label {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    (total_loss / n, correct as f64 / n)
}

/// Mean loss and gradient over a batch.
pub fn batch_gradient(head: &Head, batch: &[&FeatureExample], loss: LossKind) -> (f64, HeadGrads) {
    let mut grads = HeadGrads::zeros_like(head);
    let mut total = 0.0;
    for ex in batch {
        let trace = head.forward_trace(&ex.features);
        let (l, dlogits) = loss_and_grad(loss, &trace.logits, ex.label);
        total += l;
        head.backward(&trace, &dlogits, &mut grads);
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    (total / n, grads)
}

pub fn train_on_features(
    head: &mut Head,
    train_set: &[FeatureExample],
    val_set: &[FeatureExample],
    config: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    let classes = head.num_classes();
    config.validate(classes)?;
    if val_set.is_empty() {
        return Err(TrainError::EmptyValidation);
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyTraining);
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.label >= classes {
            return Err(TrainError::LabelOutOfRange { label: ex.label, classes });
        }
        if ex.features.len() != head.input_width() {
            return Err(ModelError::ShapeMismatch(format!(
                "head expects {} features, got {}",
                head.input_width(),
                ex.features.len()
            ))
            .into());
        }
    }

    let loss = config.loss_for(classes);
    let mut optimizer = Adam::new(head, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut rng = seed::rng_for(config.seed, "shuffle");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: BTreeMap<CheckpointPolicy, (f64, Checkpoint)> = BTreeMap::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FeatureExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (_, grads) = batch_gradient(head, &batch, loss);
            optimizer.step(head, &grads);
        }
        let (train_loss, train_acc) = score_features(head, train_set, loss);
        let (val_loss, val_acc) = score_features(head, val_set, loss);
        let record = EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc };
        log::debug!("epoch {epoch}: train acc {train_acc:.4} val acc {val_acc:.4}");
        epochs.push(record);

        for policy in CheckpointPolicy::ALL {
            let score = policy.score(&record);
            if best.get(&policy).is_none_or(|(b, _)| score > *b) {
                best.insert(policy, (score, Checkpoint { policy, epoch, head: head.clone() }));
            }
        }
    }

    let checkpoints: Vec<Checkpoint> = best.into_values().map(|(_, c)| c).collect();
    let history = TrainingHistory {
        checkpoints: checkpoints.iter().map(|c| (c.policy, c.epoch)).collect(),
        epochs,
    };
    Ok(TrainOutcome { history, checkpoints })
}

/// Index of the largest entry; earliest wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class indices for a test set.
pub fn predict_all(handle: &ModelHandle, examples: &[Example]) -> Result<Vec<usize>, TrainError> {
    examples
        .par_iter()
        .map(|ex| Ok(argmax(&handle.predict(&ex.inputs)?)))
        .collect()
}

pub fn evaluate(handle: &ModelHandle, test_set: &[Example], task: TaskDescriptor) -> Result<EvalReport, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    if task.classes.len() != handle.num_classes() {
        return Err(TrainError::InvalidConfig(format!(
            "task has {} classes but the model outputs {}",
            task.classes.len(),
            handle.num_classes()
        )));
    }
    let predicted = predict_all(handle, test_set)?;
    let gold: Vec<usize> = test_set.iter().map(|e| e.label).collect();
    let confusion = ConfusionMatrix::from_predictions(task.classes.clone(), &gold, &predicted)?;
    EvalReport::from_confusion(task, confusion)
}
