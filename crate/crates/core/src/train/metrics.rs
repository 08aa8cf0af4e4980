//! Confusion matrices and the metrics derived from them.
//!
//! Layout convention: rows are predicted classes, columns are gold classes,
//! both in canonical (Green, Yellow, Red) order restricted to the task's
//! classes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CheckpointPolicy, TrainError};
use crate::dataset::SeverityClass;
use crate::model::ModelSpec;
use crate::roi::ChannelSelection;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<SeverityClass>,
    /// `counts[predicted][gold]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<SeverityClass>) -> Self {
        let k = classes.len();
        Self { classes, counts: vec![vec![0; k]; k] }
    }

    pub fn from_counts(classes: Vec<SeverityClass>, counts: Vec<Vec<u64>>) -> Result<Self, TrainError> {
        let k = classes.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(TrainError::InvalidConfig(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(Self { classes, counts })
    }

    /// Builds the matrix from class indices into `classes`.
    pub fn from_predictions(classes: Vec<SeverityClass>, gold: &[usize], predicted: &[usize]) -> Result<Self, TrainError> {
        if gold.len() != predicted.len() {
            return Err(TrainError::InvalidConfig("gold and predicted lengths differ".into()));
        }
        let mut m = Self::new(classes);
        for (&g, &p) in gold.iter().zip(predicted) {
            m.record(p, g)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, predicted: usize, gold: usize) -> Result<(), TrainError> {
        let k = self.classes.len();
        if predicted >= k || gold >= k {
            return Err(TrainError::LabelOutOfRange { label: predicted.max(gold), classes: k });
        }
        self.counts[predicted][gold] += 1;
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    /// Predictions per class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Gold samples per class.
    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.size()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }
}

/// trace / total.
pub fn accuracy(confusion: &ConfusionMatrix) -> Result<f64, TrainError> {
    let total = confusion.total();
    if total == 0 {
        return Err(TrainError::EmptyMatrix);
    }
    Ok(confusion.trace() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    /// `None` where the class was never predicted.
    pub precision: Vec<Option<f64>>,
    /// `None` where the class never occurs in the gold labels.
    pub recall: Vec<Option<f64>>,
}

pub fn per_class_metrics(confusion: &ConfusionMatrix) -> PerClassMetrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let rows = confusion.row_sums();
    let cols = confusion.column_sums();
    let diag = |i: usize| confusion.counts[i][i];
    PerClassMetrics {
        precision: (0..confusion.size()).map(|i| ratio(diag(i), rows[i])).collect(),
        recall: (0..confusion.size()).map(|j| ratio(diag(j), cols[j])).collect(),
    }
}

/// What was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub classes: Vec<SeverityClass>,
    pub channel: ChannelSelection,
    pub model: ModelSpec,
    #[serde(default)]
    pub checkpoint: Option<CheckpointPolicy>,
}

impl TaskDescriptor {
    /// "Multi-class" or e.g. "Green Vs. Yellow".
    pub fn task_label(&self) -> String {
        if self.classes.len() == 2 {
            format!("{} Vs. {}", self.classes[0].title(), self.classes[1].title())
        } else {
            "Multi-class".to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskDescriptor,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
}

/// `value × 100` rounded half away from zero to `decimals` places, with a
/// percent sign.
pub fn format_percent(value: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let rounded = (value * 100.0 * scale).round() / scale;
    format!("{rounded:.decimals$}%")
}

impl EvalReport {
    pub fn from_confusion(task: TaskDescriptor, confusion: ConfusionMatrix) -> Result<Self, TrainError> {
        if confusion.classes != task.classes {
            return Err(TrainError::InvalidConfig("matrix classes differ from the task classes".into()));
        }
        let accuracy = accuracy(&confusion)?;
        let PerClassMetrics { precision, recall } = per_class_metrics(&confusion);
        Ok(Self { task, confusion, accuracy, precision, recall })
    }

    /// Markdown table: prediction rows, gold columns, a precision column,
    /// a recall row, and the overall accuracy in the corner cell.
    pub fn render_confusion(&self) -> String {
        let pct = |v: &Option<f64>| v.map(|x| format_percent(x, 1)).unwrap_or_else(|| "n/a".into());
        let mut out = String::new();
        let header: Vec<&str> = self.confusion.classes.iter().map(|c| c.title()).collect();
        let _ = writeln!(out, "| Prediction \\ Gold Label | {} | Precision |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len() + 2));
        for (i, class) in self.confusion.classes.iter().enumerate() {
            let cells: Vec<String> = self.confusion.counts[i].iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "| {} | {} | {} |", class.title(), cells.join(" | "), pct(&self.precision[i]));
        }
        let recall: Vec<String> = self.recall.iter().map(pct).collect();
        let _ = writeln!(out, "| Recall | {} | {} |", recall.join(" | "), format_percent(self.accuracy, 1));
        out
    }

    /// One-line summary with the two-decimal accuracy used in results tables.
    pub fn summary(&self) -> String {
        format!(
            "{} | {} | {} | accuracy {} ({} of {})",
            self.task.model.descriptor(),
            self.task.channel,
            self.task.task_label(),
            format_percent(self.accuracy, 2),
            self.confusion.trace(),
            self.confusion.total()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SeverityClass::*;

    fn reference_matrix() -> ConfusionMatrix {
        ConfusionMatrix::from_counts(
            SeverityClass::ALL.to_vec(),
            vec![vec![25, 6, 1], vec![12, 47, 18], vec![2, 7, 28]],
        )
        .unwrap()
    }

    #[test]
    fn reference_matrix_metrics() {
        let m = reference_matrix();
        assert_eq!(m.total(), 146);
        assert!((accuracy(&m).unwrap() - 100.0 / 146.0).abs() < 1e-12);
        let pc = per_class_metrics(&m);
        let p: Vec<f64> = pc.precision.iter().map(|v| v.unwrap()).collect();
        let r: Vec<f64> = pc.recall.iter().map(|v| v.unwrap()).collect();
        for (got, want) in p.iter().zip([0.781, 0.610, 0.757]) {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
        for (got, want) in r.iter().zip([0.641, 0.783, 0.596]) {
            assert!((got - want).abs() < 5e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn diagonal_and_empty() {
        let d = ConfusionMatrix::from_counts(SeverityClass::ALL.to_vec(), vec![vec![5, 0, 0], vec![0, 5, 0], vec![0, 0, 5]]).unwrap();
        assert_eq!(accuracy(&d).unwrap(), 1.0);
        let pc = per_class_metrics(&d);
        assert!(pc.precision.iter().chain(&pc.recall).all(|v| *v == Some(1.0)));
        assert!(matches!(accuracy(&ConfusionMatrix::new(vec![Green, Red])), Err(TrainError::EmptyMatrix)));
    }

    #[test]
    fn zero_prediction_row_is_undefined() {
        let m = ConfusionMatrix::from_counts(SeverityClass::ALL.to_vec(), vec![vec![3, 1, 0], vec![0, 0, 0], vec![1, 2, 4]]).unwrap();
        let pc = per_class_metrics(&m);
        assert_eq!(pc.precision[1], None);
        assert_eq!(pc.recall[1], Some(0.0));
    }

    #[test]
    fn binary_accuracy_two_ways() {
        let m = ConfusionMatrix::from_counts(vec![Green, Red], vec![vec![30, 10], vec![5, 55]]).unwrap();
        let (tp, fp, fn_, tn) = (30.0, 10.0, 5.0, 55.0);
        assert_eq!(accuracy(&m).unwrap(), 0.85);
        assert_eq!((tp + tn) / (tp + fp + fn_ + tn), 0.85);
    }

    #[test]
    fn constant_green_classifier() {
        let gold: Vec<usize> = [(0, 39), (1, 47), (2, 60)].iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
        let pred = vec![0; gold.len()];
        let m = ConfusionMatrix::from_predictions(SeverityClass::ALL.to_vec(), &gold, &pred).unwrap();
        assert!((accuracy(&m).unwrap() - 39.0 / 146.0).abs() < 1e-12);
        assert_eq!(m.column_sums(), vec![39, 47, 60]);
        assert_eq!(m.row_sums(), vec![146, 0, 0]);
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(100.0 / 146.0, 2), "68.49%");
        assert_eq!(format_percent(100.0 / 146.0, 1), "68.5%");
        assert_eq!(format_percent(1.0, 2), "100.00%");
        assert_eq!(format_percent(0.78125, 1), "78.1%");
    }

    fn arb_matrix(k: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
        prop::collection::vec(prop::collection::vec(0u64..60, k), k)
    }

    proptest! {
        #[test]
        fn accuracy_is_recall_weighted_by_support(counts in arb_matrix(3)) {
            let m = ConfusionMatrix::from_counts(SeverityClass::ALL.to_vec(), counts).unwrap();
            prop_assume!(m.total() > 0);
            let acc = accuracy(&m).unwrap();
            let cols = m.column_sums();
            let pc = per_class_metrics(&m);
            let weighted: f64 = pc.recall.iter().zip(&cols)
                .map(|(r, &c)| r.unwrap_or(0.0) * c as f64 / m.total() as f64)
                .sum();
            prop_assert!((acc - weighted).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&acc));
        }

        #[test]
        fn binary_trace_form_equals_tp_tn_form(counts in arb_matrix(2)) {
            let m = ConfusionMatrix::from_counts(vec![Green, Yellow], counts.clone()).unwrap();
            prop_assume!(m.total() > 0);
            // positive = Green: TP predicted G & gold G; TN predicted Y & gold Y
            let (tp, fp, fn_, tn) = (counts[0][0], counts[0][1], counts[1][0], counts[1][1]);
            let eq1 = (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64;
            prop_assert_eq!(accuracy(&m).unwrap(), eq1);
        }
    }
}
