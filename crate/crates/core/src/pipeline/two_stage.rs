use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::dataset::{Stage, StageLabel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::imaging::{resize_bilinear, Image, CHANNELS};
use crate::tensor::Tensor;

pub const DEFAULT_REVIEW_THRESHOLD: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Unusable,
    Safe,
    Unsafe,
    NeedsReview,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStageVerdict {
    pub outcome: Outcome,
    /// Stage-1 label, USABLE or UNUSABLE.
    pub stage1: StageLabel,
    pub stage1_confidence: f64,
    /// Present only when stage 2 ran and cleared the review threshold.
    pub stage2_confidence: Option<f64>,
}

/// Stage-1 and optional stage-2 checkpoints with a review threshold.
#[derive(Clone, Debug)]
pub struct TwoStageClassifier {
    stage1: Checkpoint,
    stage2: Option<Checkpoint>,
    review_threshold: f64,
}

fn check_stage(c: &Checkpoint, want: Stage) -> Result<()> {
    if c.network.num_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "stage {} checkpoint must be a 2-way network, got {} outputs",
            want.number(),
            c.network.num_classes()
        )));
    }
    match c.stage {
        Some(s) if s != want => Err(Error::InvalidArgument(format!(
            "checkpoint was trained for stage {}, not stage {}",
            s.number(),
            want.number()
        ))),
        _ => Ok(()),
    }
}

fn image_tensor(img: &Image, (h, w): (usize, usize)) -> Result<Tensor> {
    let img = resize_bilinear(img, h, w)?;
    let mut data = vec![0.0; CHANNELS * h * w];
    img.write_chw(&mut data);
    Tensor::new(vec![1, CHANNELS, h, w], data)
}

/// Winning class index and its probability; ties go to the lower index.
fn top(c: &Checkpoint, img: &Image) -> Result<(usize, f64)> {
    let p = c.probabilities(&image_tensor(img, c.resolution())?, Exec::Sequential)?;
    let p = p.data();
    let i = super::metrics::argmax(p);
    Ok((i, p[i] as f64))
}

impl TwoStageClassifier {
    pub fn new(stage1: Checkpoint, stage2: Option<Checkpoint>, review_threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&review_threshold) {
            return Err(Error::InvalidArgument(format!("review threshold must be in [0, 1], got {review_threshold}")));
        }
        check_stage(&stage1, Stage::Usability)?;
        if let Some(c) = &stage2 {
            check_stage(c, Stage::Safety)?;
        }
        Ok(TwoStageClassifier { stage1, stage2, review_threshold })
    }

    /// Like [`TwoStageClassifier::new`] but rejects a missing stage-1 model.
    pub fn from_checkpoints(stage1: Option<Checkpoint>, stage2: Option<Checkpoint>, review_threshold: f64) -> Result<Self> {
        let stage1 = stage1.ok_or_else(|| Error::InvalidArgument("a stage-1 checkpoint is required".into()))?;
        Self::new(stage1, stage2, review_threshold)
    }

    pub fn has_stage2(&self) -> bool {
        self.stage2.is_some()
    }

    pub fn review_threshold(&self) -> f64 {
        self.review_threshold
    }

    pub fn classify(&self, img: &Image) -> Result<TwoStageVerdict> {
        let (i, p1) = top(&self.stage1, img)?;
        let stage1 = Stage::Usability.labels()[i];
        let verdict = |outcome, stage2_confidence| TwoStageVerdict { outcome, stage1, stage1_confidence: p1, stage2_confidence };
        if stage1 == StageLabel::Unusable {
            return Ok(verdict(Outcome::Unusable, None));
        }
        let Some(stage2) = &self.stage2 else {
            return Ok(verdict(Outcome::NeedsReview, None));
        };
        let (j, p2) = top(stage2, img)?;
        if p2 < self.review_threshold {
            return Ok(verdict(Outcome::NeedsReview, None));
        }
        let outcome = match Stage::Safety.labels()[j] {
            StageLabel::Safe => Outcome::Safe,
            _ => Outcome::Unsafe,
        };
        Ok(verdict(outcome, Some(p2)))
    }
}

pub fn classify_two_stage(
    img: &Image,
    stage1: Option<&Checkpoint>,
    stage2: Option<&Checkpoint>,
    review_threshold: f64,
) -> Result<TwoStageVerdict> {
    TwoStageClassifier::from_checkpoints(stage1.cloned(), stage2.cloned(), review_threshold)?.classify(img)
}
