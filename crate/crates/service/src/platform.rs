use std::path::PathBuf;
use std::sync::Arc;

use loadsafe_core::dataset::{ClassLabel, DatasetManifest};
use loadsafe_core::imaging::{decode_ppm, Image};
use loadsafe_core::pipeline::{Checkpoint, TwoStageClassifier, TwoStageVerdict, DEFAULT_REVIEW_THRESHOLD};

use crate::clock::{Clock, SystemClock};
use crate::error::{Result, ServiceError};
use crate::store::{ReviewStore, DEFAULT_LEASE_SECONDS};
use crate::types::{QueueMetrics, Status, Submission};

/// Screens an intake image.
pub trait Screener: Send + Sync {
    fn screen(&self, img: &Image) -> loadsafe_core::Result<TwoStageVerdict>;
}

impl Screener for TwoStageClassifier {
    fn screen(&self, img: &Image) -> loadsafe_core::Result<TwoStageVerdict> {
        self.classify(img)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub stage1: PathBuf,
    pub stage2: Option<PathBuf>,
    pub review_threshold: f64,
    pub lease_seconds: i64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, stage1: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            stage1: stage1.into(),
            stage2: None,
            review_threshold: DEFAULT_REVIEW_THRESHOLD,
            lease_seconds: DEFAULT_LEASE_SECONDS,
        }
    }
}

/// Intake screening in front of the review store.
pub struct Platform {
    store: ReviewStore,
    screener: Arc<dyn Screener>,
}

impl Platform {
    pub fn new(store: ReviewStore, screener: Arc<dyn Screener>) -> Self {
        Platform { store, screener }
    }

    /// Loads the checkpoints and replays the event log. Fails if the
    /// stage-1 model cannot be loaded.
    pub fn open(cfg: &ServiceConfig) -> Result<Self> {
        Self::open_with_clock(cfg, Arc::new(SystemClock))
    }

    pub fn open_with_clock(cfg: &ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        let stage1 = Checkpoint::load(&cfg.stage1)?;
        let stage2 = cfg.stage2.as_ref().map(Checkpoint::load).transpose()?;
        let classifier = TwoStageClassifier::new(stage1, stage2, cfg.review_threshold)?;
        let store = ReviewStore::open(&cfg.data_dir, clock, cfg.lease_seconds)?;
        Ok(Platform::new(store, Arc::new(classifier)))
    }

    pub fn store(&self) -> &ReviewStore {
        &self.store
    }

    /// Decodes and screens the photo, then records it. Unparseable images
    /// create nothing.
    pub fn submit_photo(&self, bytes: &[u8], metadata: Option<serde_json::Value>) -> Result<Submission> {
        let img = decode_ppm(bytes).map_err(|e| ServiceError::BadImage(e.to_string()))?;
        let verdict = self.screener.screen(&img)?;
        self.store.submit(bytes, &verdict, metadata)
    }

    pub fn list_queue(&self, status: Option<Status>, limit: Option<usize>) -> Vec<Submission> {
        self.store.list_queue(status, limit)
    }

    pub fn claim_next(&self, operator: &str) -> Result<Option<Submission>> {
        self.store.claim_next(operator)
    }

    pub fn post_decision(&self, id: &str, operator: &str, label: ClassLabel) -> Result<Submission> {
        self.store.decide(id, operator, label)
    }

    pub fn metrics(&self) -> QueueMetrics {
        self.store.metrics()
    }

    pub fn export_labels(&self, dest: impl AsRef<std::path::Path>) -> Result<DatasetManifest> {
        self.store.export(dest)
    }
}
