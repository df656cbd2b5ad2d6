use serde::{Deserialize, Serialize};

use crate::label::NUM_CLASSES;

/// Classification results for one evaluation. `confusion[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub per_class_accuracy: [f64; NUM_CLASSES],
    pub total_accuracy: f64,
    pub epoch: u32,
}

impl Metrics {
    /// A class with no samples gets per-class accuracy 0.
    pub fn from_confusion(confusion: [[u64; NUM_CLASSES]; NUM_CLASSES], epoch: u32) -> Self {
        let mut per_class_accuracy = [0.0; NUM_CLASSES];
        let (mut hits, mut total) = (0, 0);
        for (c, row) in confusion.iter().enumerate() {
            let n: u64 = row.iter().sum();
            if n > 0 {
                per_class_accuracy[c] = row[c] as f64 / n as f64;
            }
            hits += row[c];
            total += n;
        }
        let total_accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self { confusion, per_class_accuracy, total_accuracy, epoch }
    }

    pub fn from_predictions(actual: &[usize], predicted: &[usize], epoch: u32) -> Self {
        let mut confusion = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (&a, &p) in actual.iter().zip(predicted) {
            confusion[a][p] += 1;
        }
        Self::from_confusion(confusion, epoch)
    }

    pub fn count(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

/// Per-epoch test metrics and training loss.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<Metrics>,
    pub train_loss: Vec<f64>,
}

impl History {
    pub fn push(&mut self, metrics: Metrics, loss: f64) {
        self.epochs.push(metrics);
        self.train_loss.push(loss);
    }

    /// Metrics of the first epoch reaching the maximum total accuracy.
    pub fn best(&self) -> Option<&Metrics> {
        let mut best: Option<&Metrics> = None;
        for m in &self.epochs {
            if best.is_none_or(|b| m.total_accuracy > b.total_accuracy) {
                best = Some(m);
            }
        }
        best
    }

    pub fn max_total_accuracy(&self) -> f64 {
        self.best().map_or(0.0, |m| m.total_accuracy)
    }

    pub fn best_epoch(&self) -> Option<u32> {
        self.best().map(|m| m.epoch)
    }
}
