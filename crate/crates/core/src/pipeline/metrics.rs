use serde::{Deserialize, Serialize};

use super::{Checkpoint, LabeledSet};
use crate::error::{Error, Result};
use crate::exec::Exec;

const EVAL_BATCH: usize = 64;

/// Binary confusion counts relative to the declared positive class index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub positive: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(positive: usize, tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix { positive, tp, fp, fn_, tn }
    }

    /// Counts (prediction, label) pairs over classes {0, 1}.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>, positive: usize) -> Self {
        let mut cm = ConfusionMatrix { positive, ..Default::default() };
        for (pred, label) in pairs {
            match (pred == positive, label == positive) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, true) => cm.fn_ += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with the other class declared positive.
    pub fn transposed(&self) -> Self {
        ConfusionMatrix { positive: 1 - self.positive.min(1), tp: self.tn, fp: self.fn_, fn_: self.fp, tn: self.tp }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    /// Metrics whose denominator was zero and were set to 0.
    pub degenerate: Vec<String>,
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Empty("confusion matrix".into()));
    }
    let (tp, fp, fn_, tn) = (cm.tp as f64, cm.fp as f64, cm.fn_ as f64, cm.tn as f64);
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: f64, den: f64| {
        if den == 0.0 {
            degenerate.push(name.to_string());
            0.0
        } else {
            num / den
        }
    };
    let accuracy = (tp + tn) / (tp + fp + fn_ + tn);
    let precision = ratio("precision", tp, tp + fp);
    let recall = ratio("recall", tp, tp + fn_);
    let f1 = ratio("f1", 2.0 * precision * recall, precision + recall);
    let mcc = ratio("mcc", tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt());
    Ok(MetricsReport { accuracy, precision, recall, f1, mcc, degenerate })
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class index for every sample, in inference mode.
pub fn predict(c: &Checkpoint, set: &LabeledSet, exec: Exec) -> Result<Vec<usize>> {
    let k = c.network.num_classes();
    let mut preds = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = c.network.infer(&set.batch(chunk, None)?, exec)?;
        preds.extend(logits.data().chunks_exact(k).map(argmax));
    }
    Ok(preds)
}

/// Confusion matrix of the checkpoint's argmax predictions on `set`.
pub fn evaluate(c: &Checkpoint, set: &LabeledSet, positive: usize, exec: Exec) -> Result<ConfusionMatrix> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let k = c.network.num_classes();
    if k != 2 || positive >= k {
        return Err(Error::InvalidArgument(format!(
            "binary evaluation needs a 2-way network and positive class 0 or 1, got width {k} and positive {positive}"
        )));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} is out of range for a {k}-way network")));
    }
    if (set.resolution, set.resolution) != c.resolution() {
        return Err(Error::Shape(format!(
            "set resolution {} does not match network input {:?}",
            set.resolution,
            c.resolution()
        )));
    }
    let preds = predict(c, set, exec)?;
    Ok(ConfusionMatrix::from_pairs(preds.into_iter().zip(set.labels.iter().copied()), positive))
}
