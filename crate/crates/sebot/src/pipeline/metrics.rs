//! Evaluation metrics with the bot class as positive.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub view_prep_secs: f64,
    pub train_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub total: f64,
    pub ce: f64,
    pub node_contrast: Option<f64>,
    pub subgraph_contrast: Option<f64>,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub best_epoch: usize,
    pub loss_trace: Vec<EpochTrace>,
    pub timings: Timings,
}

impl MetricsReport {
    /// JSON view without wall-clock timings; identical for identical
    /// `(dataset, config, seed)` runs.
    pub fn reproducible_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value.as_object_mut().unwrap().remove("timings");
        value
    }

    /// Flat CSV of the per-epoch trace for plotting.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,total,ce,node_contrast,subgraph_contrast,val_accuracy\n");
        for t in &self.loss_trace {
            let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                t.epoch,
                t.total,
                t.ce,
                fmt(t.node_contrast),
                fmt(t.subgraph_contrast),
                t.val_accuracy
            ));
        }
        out
    }
}

/// Accuracy, F1, recall, precision from a confusion count, bot = positive.
/// Undefined ratios (empty denominators) are reported as 0.
pub fn metrics_from_confusion(tp: usize, fp: usize, fn_: usize, tn: usize) -> (f64, f64, f64, f64) {
    let total = (tp + fp + fn_ + tn) as f64;
    let accuracy = if total > 0.0 { (tp + tn) as f64 / total } else { 0.0 };
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (accuracy, f1, recall, precision)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_is_all_ones() {
        let (a, f1, r, p) = metrics_from_confusion(7, 0, 0, 13);
        assert_eq!((a, f1, r, p), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_human_predictions_on_imbalanced_split() {
        // 70/30 human/bot, everything predicted human.
        let (a, f1, r, p) = metrics_from_confusion(0, 0, 30, 70);
        assert_eq!(a, 0.7);
        assert_eq!(r, 0.0);
        assert_eq!(p, 0.0);
        assert_eq!(f1, 0.0);
    }

    #[test]
    fn hand_confusion_case() {
        let (a, f1, r, p) = metrics_from_confusion(3, 1, 2, 4);
        assert!((p - 0.75).abs() < 1e-12);
        assert!((r - 0.6).abs() < 1e-12);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-9);
        assert!((a - 0.7).abs() < 1e-12);
    }
}
