#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use loadsafe_core::dataset::StageLabel;
use loadsafe_core::imaging::{encode_ppm, Image};
use loadsafe_core::pipeline::{Outcome, TwoStageVerdict};
use loadsafe_service::{Clock, ManualClock, Platform, ReviewStore, Screener};

/// Screens by mean brightness: dark is unusable, very bright is a
/// confident SAFE, bright a confident UNSAFE, anything else goes to review.
pub struct BrightnessScreener;

impl Screener for BrightnessScreener {
    fn screen(&self, img: &Image) -> loadsafe_core::Result<TwoStageVerdict> {
        let m = img.mean() as f64;
        let (outcome, s2) = match m {
            m if m < 0.2 => (Outcome::Unusable, None),
            m if m > 0.8 => (Outcome::Safe, Some(0.95)),
            m if m > 0.6 => (Outcome::Unsafe, Some(0.91)),
            _ => (Outcome::NeedsReview, None),
        };
        Ok(TwoStageVerdict {
            outcome,
            stage1: if outcome == Outcome::Unusable { StageLabel::Unusable } else { StageLabel::Usable },
            stage1_confidence: 0.5 + (m - 0.2).abs().min(0.5),
            stage2_confidence: s2,
        })
    }
}

pub fn ppm(level: f32) -> Vec<u8> {
    encode_ppm(&Image::filled(4, 4, [level; 3]))
}

pub fn manual_clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap()))
}

pub fn platform(dir: &Path, clock: Arc<dyn Clock>) -> Platform {
    Platform::new(ReviewStore::open(dir, clock, 300).unwrap(), Arc::new(BrightnessScreener))
}
