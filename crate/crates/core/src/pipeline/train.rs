use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::argmax;
use super::{Checkpoint, LabeledSet};
use crate::arch::ArchitectureSpec;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::imaging::AugmentationConfig;
use crate::model::Network;
use crate::tensor::{softmax_cross_entropy, ParameterSet};

const VAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// `None` trains on the raw images.
    pub augmentation: Option<AugmentationConfig>,
    pub patience: usize,
    pub min_delta: f64,
    pub resolution: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            augmentation: Some(AugmentationConfig::default()),
            patience: 5,
            min_delta: 0.005,
            resolution: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be non-negative, got {}", self.min_delta));
        }
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

/// One row per completed epoch. Field names match the CSV header.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: f64,
    pub valloss: f64,
    pub valacc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub rows: Vec<EpochRow>,
}

impl TrainingHistory {
    /// History with only validation losses set, for analysis and tests.
    pub fn from_val_losses(losses: &[f64]) -> Self {
        TrainingHistory {
            rows: losses.iter().enumerate().map(|(epoch, &v)| EpochRow { epoch, loss: v, valloss: v, valacc: 0.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["epoch", "loss", "valloss", "valacc"])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<EpochRow>, _>>()?;
        Ok(TrainingHistory { rows })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// Returns the index of the epoch holding the best validation loss once
/// `patience` consecutive later epochs have each failed to beat it by at
/// least `min_delta`. Returns `None` if that never happens.
pub fn detect_overfit(h: &TrainingHistory, patience: usize, min_delta: f64) -> Result<Option<usize>> {
    if patience == 0 {
        return Err(Error::InvalidArgument("patience must be at least 1".into()));
    }
    let mut rows = h.rows.iter().map(|r| r.valloss).enumerate();
    let Some((_, mut best)) = rows.next() else { return Ok(None) };
    let (mut best_i, mut stale) = (0, 0);
    for (i, v) in rows {
        if v < best && best - v >= min_delta {
            best = v;
            best_i = i;
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                return Ok(Some(best_i));
            }
        }
    }
    Ok(None)
}

/// Mean cross-entropy and argmax accuracy in inference mode.
pub fn evaluate_loss(net: &Network, set: &LabeledSet, exec: Exec) -> Result<(f64, f64)> {
    let k = net.num_classes();
    let (mut loss, mut correct) = (0.0f64, 0usize);
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(VAL_BATCH) {
        let labels = set.batch_labels(chunk);
        let logits = net.infer(&set.batch(chunk, None)?, exec)?;
        let (l, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l as f64 * chunk.len() as f64;
        correct += logits.data().chunks_exact(k).zip(&labels).filter(|(row, &y)| argmax(row) == y).count();
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

fn check_set(name: &str, set: &LabeledSet, spec: &ArchitectureSpec, k: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Empty(format!("{name} set")));
    }
    let s = &spec.input_shape;
    if (set.resolution, set.resolution) != (s.height, s.width) {
        return Err(Error::Shape(format!(
            "{name} set resolution {} does not match network input {}x{}",
            set.resolution, s.height, s.width
        )));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("{name} label {bad} is out of range for a {k}-way network")));
    }
    Ok(())
}

pub fn train(spec: &ArchitectureSpec, train_set: &LabeledSet, val_set: &LabeledSet, cfg: &TrainConfig) -> Result<(Checkpoint, TrainingHistory)> {
    train_with(spec, train_set, val_set, cfg, Exec::default())
}

/// Mini-batch SGD keeping the weights of the epoch with the lowest
/// validation loss. Stops at `cfg.epochs` or when [`detect_overfit`] fires.
pub fn train_with(
    spec: &ArchitectureSpec,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<(Checkpoint, TrainingHistory)> {
    cfg.validate()?;
    let mut net = Network::new(spec, cfg.seed)?;
    let k = net.num_classes();
    if (spec.input_shape.height, spec.input_shape.width) != (cfg.resolution, cfg.resolution) {
        return Err(Error::Shape(format!(
            "configured resolution {} does not match network input {}x{}",
            cfg.resolution, spec.input_shape.height, spec.input_shape.width
        )));
    }
    check_set("training", train_set, spec, k)?;
    check_set("validation", val_set, spec, k)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let aug = cfg.augmentation.as_ref().map(|a| (a, (epoch * n) as u64));
            let x = train_set.batch(chunk, aug)?;
            let (logits, tape) = net.forward_train(&x, exec)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &train_set.batch_labels(chunk))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: loss as f64 });
            }
            total += loss as f64 * chunk.len() as f64;
            net.backward(tape, &grad, exec)?;
            net.params_mut().sgd_step(cfg.learning_rate, cfg.momentum)?;
        }
        let (valloss, valacc) = evaluate_loss(&net, val_set, exec)?;
        if !valloss.is_finite() {
            return Err(Error::Divergence { epoch, loss: valloss });
        }
        let row = EpochRow { epoch, loss: total / n as f64, valloss, valacc };
        log::info!("epoch {epoch}: loss {:.4} valloss {:.4} valacc {:.4}", row.loss, valloss, valacc);
        history.rows.push(row);
        if best.as_ref().map_or(true, |(b, _, _)| valloss < *b) {
            best = Some((valloss, epoch, net.params().snapshot()));
        }
        if detect_overfit(&history, cfg.patience, cfg.min_delta)?.is_some() {
            break;
        }
    }
    let (_, epoch, params) = best.expect("at least one epoch ran");
    let network = Network::from_parameters(spec, params, cfg.seed)?;
    Ok((Checkpoint::new(network, train_set.stage, cfg.seed, epoch), history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detect_overfit_examples() {
        let h = TrainingHistory::from_val_losses(&[1.0, 0.8, 0.6, 0.5, 0.55, 0.6, 0.7]);
        assert_eq!(detect_overfit(&h, 2, 0.0).unwrap(), Some(3));
        let h = TrainingHistory::from_val_losses(&[1.0, 0.9, 0.8, 0.7, 0.6]);
        assert_eq!(detect_overfit(&h, 1, 0.0).unwrap(), None);
        assert_eq!(detect_overfit(&TrainingHistory::default(), 3, 0.0).unwrap(), None);
        assert!(detect_overfit(&h, 0, 0.0).is_err());
    }

    #[test]
    fn min_delta_ignores_small_improvements() {
        // 0.899 beats 0.9 by less than 0.01, so it does not reset patience
        let h = TrainingHistory::from_val_losses(&[1.0, 0.9, 0.899, 0.898, 0.95]);
        assert_eq!(detect_overfit(&h, 3, 0.01).unwrap(), Some(1));
        assert_eq!(detect_overfit(&h, 3, 0.0).unwrap(), None);
    }

    #[test]
    fn csv_round_trip_and_header() {
        let h = TrainingHistory {
            rows: vec![
                EpochRow { epoch: 0, loss: 0.7, valloss: 0.69, valacc: 0.5 },
                EpochRow { epoch: 1, loss: 0.25, valloss: 0.3125, valacc: 0.875 },
            ],
        };
        let text = h.to_csv().unwrap();
        assert!(text.starts_with("epoch,loss,valloss,valacc\n"));
        assert_eq!(TrainingHistory::from_csv(&text).unwrap(), h);
        assert_eq!(TrainingHistory::default().to_csv().unwrap(), "epoch,loss,valloss,valacc\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
    }
}
