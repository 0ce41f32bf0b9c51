//! Review queue state rebuilt from an append-only JSON-lines event log.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use loadsafe_core::dataset::{ClassLabel, DatasetManifest, Origin, SampleRecord, StageLabel};
use loadsafe_core::pipeline::{Outcome, TwoStageVerdict};

use crate::clock::Clock;
use crate::error::{Result, ServiceError};
use crate::types::{Claim, Event, EventRecord, QueueMetrics, ReviewDecision, Status, Submission, Verdict};

pub const EVENT_LOG: &str = "events.jsonl";
pub const IMAGE_DIR: &str = "images";
pub const DEFAULT_LEASE_SECONDS: i64 = 300;

/// Everything derivable from the event log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QueueState {
    pub last_seq: u64,
    pub submissions: BTreeMap<String, Submission>,
}

fn corrupt(line: usize, reason: impl Into<String>) -> ServiceError {
    ServiceError::CorruptLog { line, reason: reason.into() }
}

impl QueueState {
    /// Applies one event, checking sequence density and state transitions.
    pub fn apply(&mut self, rec: &EventRecord) -> Result<()> {
        let line = rec.seq as usize;
        if rec.seq != self.last_seq + 1 {
            return Err(corrupt(line, format!("sequence {} follows {}", rec.seq, self.last_seq)));
        }
        match &rec.event {
            Event::Submitted(s) => {
                if self.submissions.contains_key(&s.id) {
                    return Err(corrupt(line, format!("submission `{}` submitted twice", s.id)));
                }
                self.submissions.insert(s.id.clone(), s.clone());
            }
            Event::Claimed { submission_id, claim } => {
                let s = self.submissions.get_mut(submission_id).ok_or_else(|| corrupt(line, "claim of unknown id"))?;
                if s.status != Status::PendingReview {
                    return Err(corrupt(line, format!("claim of `{submission_id}` in state {}", s.status.as_str())));
                }
                s.claim = Some(claim.clone());
            }
            Event::Decided(d) => {
                let s = self.submissions.get_mut(&d.submission_id).ok_or_else(|| corrupt(line, "decision on unknown id"))?;
                if s.status != Status::PendingReview {
                    return Err(corrupt(line, format!("decision on `{}` in state {}", d.submission_id, s.status.as_str())));
                }
                s.status = Status::Decided;
                s.claim = None;
                s.decision = Some(d.clone());
            }
        }
        self.last_seq = rec.seq;
        Ok(())
    }

    /// Submissions in arrival order (received-at, then id).
    pub fn ordered(&self) -> Vec<&Submission> {
        let mut v: Vec<&Submission> = self.submissions.values().collect();
        v.sort_by(|a, b| a.received_at.cmp(&b.received_at).then_with(|| a.id.cmp(&b.id)));
        v
    }
}

fn lease_active(claim: &Option<Claim>, now: DateTime<Utc>) -> Option<&Claim> {
    claim.as_ref().filter(|c| c.expires_at > now)
}

struct Writer {
    file: File,
}

/// Single-writer store. Writes serialize on one mutex and append to the
/// log before the new state is published; reads use the last published
/// snapshot.
pub struct ReviewStore {
    dir: PathBuf,
    clock: Arc<dyn Clock>,
    lease: Duration,
    writer: Mutex<Writer>,
    state: RwLock<Arc<QueueState>>,
}

/// Reads and validates an event log. A torn final line (no trailing
/// newline) is dropped and reported through the returned byte length.
fn read_log(path: &Path) -> Result<(Vec<EventRecord>, usize)> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((vec![], 0)),
        Err(e) => return Err(ServiceError::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|_| corrupt(0, "log is not UTF-8"))?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        events.push(rec);
    }
    Ok((events, complete))
}

impl ReviewStore {
    pub fn open(dir: impl Into<PathBuf>, clock: Arc<dyn Clock>, lease_seconds: i64) -> Result<Self> {
        let dir = dir.into();
        if lease_seconds <= 0 {
            return Err(ServiceError::InvalidArgument(format!("lease must be positive, got {lease_seconds} s")));
        }
        let images = dir.join(IMAGE_DIR);
        std::fs::create_dir_all(&images).map_err(|e| ServiceError::io(&images, e))?;
        let log = dir.join(EVENT_LOG);
        let (events, complete) = read_log(&log)?;
        let mut state = QueueState::default();
        for rec in &events {
            state.apply(rec)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&log).map_err(|e| ServiceError::io(&log, e))?;
        let len = file.metadata().map_err(|e| ServiceError::io(&log, e))?.len() as usize;
        if len != complete {
            log::warn!("dropping {} bytes of a torn final event in {}", len - complete, log.display());
            file.set_len(complete as u64).map_err(|e| ServiceError::io(&log, e))?;
        }
        Ok(ReviewStore {
            dir,
            clock,
            lease: Duration::seconds(lease_seconds),
            writer: Mutex::new(Writer { file }),
            state: RwLock::new(Arc::new(state)),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.dir
    }

    pub fn snapshot(&self) -> Arc<QueueState> {
        self.state.read().unwrap().clone()
    }

    /// All events currently in the log.
    pub fn events(&self) -> Result<Vec<EventRecord>> {
        let _w = self.writer.lock().unwrap();
        Ok(read_log(&self.dir.join(EVENT_LOG))?.0)
    }

    /// Runs `plan` against the current state under the writer lock. If it
    /// yields an event, the event is appended and applied.
    fn transact<R>(&self, plan: impl FnOnce(&QueueState, DateTime<Utc>) -> Result<(Option<Event>, R)>) -> Result<R> {
        let mut w = self.writer.lock().unwrap();
        let current = self.snapshot();
        let (event, out) = plan(&current, self.clock.now())?;
        if let Some(event) = event {
            let rec = EventRecord { seq: current.last_seq + 1, event };
            let mut next = (*current).clone();
            next.apply(&rec)?;
            let mut line = serde_json::to_vec(&rec).map_err(|e| ServiceError::InvalidArgument(e.to_string()))?;
            line.push(b'\n');
            let log = self.dir.join(EVENT_LOG);
            w.file.write_all(&line).map_err(|e| ServiceError::io(&log, e))?;
            w.file.sync_data().map_err(|e| ServiceError::io(&log, e))?;
            *self.state.write().unwrap() = Arc::new(next);
        }
        Ok(out)
    }

    /// Stores an already screened image. The blob is written before the
    /// SUBMITTED event.
    pub fn submit(&self, image: &[u8], verdict: &TwoStageVerdict, metadata: Option<serde_json::Value>) -> Result<Submission> {
        self.transact(|state, now| {
            let id = format!("sub-{:06}", state.submissions.len() + 1);
            let rel = format!("{IMAGE_DIR}/{id}.ppm");
            let path = self.dir.join(&rel);
            std::fs::write(&path, image).map_err(|e| ServiceError::io(&path, e))?;
            let stage2 = match verdict.outcome {
                Outcome::Safe => Some(StageLabel::Safe),
                Outcome::Unsafe => Some(StageLabel::Unsafe),
                _ => None,
            }
            .map(|label| Verdict { label, confidence: verdict.stage2_confidence.unwrap_or(0.0) });
            let status = if verdict.outcome == Outcome::Unusable { Status::RejectedUnusable } else { Status::PendingReview };
            let s = Submission {
                id,
                image: rel,
                received_at: now,
                stage1: Verdict { label: verdict.stage1, confidence: verdict.stage1_confidence },
                stage2,
                status,
                metadata,
                claim: None,
                decision: None,
            };
            Ok((Some(Event::Submitted(s.clone())), s))
        })
    }

    pub fn get(&self, id: &str) -> Result<Submission> {
        self.snapshot().submissions.get(id).cloned().ok_or_else(|| ServiceError::NotFound(id.into()))
    }

    pub fn image_path(&self, id: &str) -> Result<PathBuf> {
        Ok(self.dir.join(self.get(id)?.image))
    }

    /// Submissions with `status` in arrival order, at most `limit`.
    pub fn list_queue(&self, status: Option<Status>, limit: Option<usize>) -> Vec<Submission> {
        let snap = self.snapshot();
        snap.ordered()
            .into_iter()
            .filter(|s| status.map_or(true, |st| s.status == st))
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    /// Leases the oldest pending item not held by another operator's
    /// active claim. An operator re-claiming their own item renews it.
    pub fn claim_next(&self, operator: &str) -> Result<Option<Submission>> {
        if operator.trim().is_empty() {
            return Err(ServiceError::InvalidArgument("operator id is required".into()));
        }
        self.transact(|state, now| {
            let next = state.ordered().into_iter().find(|s| {
                s.status == Status::PendingReview
                    && lease_active(&s.claim, now).map_or(true, |c| c.operator_id == operator)
            });
            let Some(s) = next else { return Ok((None, None)) };
            let claim = Claim { operator_id: operator.into(), claimed_at: now, expires_at: now + self.lease };
            let mut s = s.clone();
            s.claim = Some(claim.clone());
            Ok((Some(Event::Claimed { submission_id: s.id.clone(), claim }), Some(s)))
        })
    }

    /// Records the operator's final label. Repeating the identical decision
    /// returns the submission without a new event.
    pub fn decide(&self, id: &str, operator: &str, label: ClassLabel) -> Result<Submission> {
        self.transact(|state, now| {
            let s = state.submissions.get(id).ok_or_else(|| ServiceError::NotFound(id.into()))?;
            match s.status {
                Status::RejectedUnusable => return Err(ServiceError::NotQueued(id.into())),
                Status::Decided => {
                    let d = s.decision.as_ref().expect("decided submissions carry a decision");
                    if d.final_label == label && d.operator_id == operator {
                        return Ok((None, s.clone()));
                    }
                    return Err(ServiceError::Conflict { id: id.into(), existing: d.final_label });
                }
                Status::PendingReview => {}
            }
            match &s.claim {
                None => return Err(ServiceError::NotClaimed(id.into())),
                Some(c) if c.operator_id != operator => {
                    return Err(if c.expires_at > now {
                        ServiceError::ClaimedByOther { id: id.into(), operator: c.operator_id.clone() }
                    } else {
                        ServiceError::NotClaimed(id.into())
                    })
                }
                Some(c) if c.expires_at <= now => return Err(ServiceError::LeaseExpired(id.into())),
                Some(_) => {}
            }
            let d = ReviewDecision { submission_id: id.into(), operator_id: operator.into(), final_label: label, decided_at: now };
            let mut out = s.clone();
            out.status = Status::Decided;
            out.claim = None;
            out.decision = Some(d.clone());
            Ok((Some(Event::Decided(d)), out))
        })
    }

    pub fn metrics(&self) -> QueueMetrics {
        let snap = self.snapshot();
        let now = self.clock.now();
        let mut counts: BTreeMap<Status, usize> = Status::ALL.iter().map(|&s| (s, 0)).collect();
        let mut claimed = 0;
        for s in snap.submissions.values() {
            *counts.get_mut(&s.status).unwrap() += 1;
            if s.status == Status::PendingReview && lease_active(&s.claim, now).is_some() {
                claimed += 1;
            }
        }
        let total = snap.submissions.len();
        let rejected = counts[&Status::RejectedUnusable];
        QueueMetrics {
            counts,
            total,
            stage1_rejection_rate: if total == 0 { 0.0 } else { rejected as f64 / total as f64 },
            claimed,
            last_seq: snap.last_seq,
        }
    }

    /// Copies every decided image to `dest/images/` and writes
    /// `dest/manifest.jsonl` labeled with the operators' decisions.
    pub fn export(&self, dest: impl AsRef<Path>) -> Result<DatasetManifest> {
        let dest = dest.as_ref();
        let snap = self.snapshot();
        let decided: Vec<&Submission> = snap.ordered().into_iter().filter(|s| s.status == Status::Decided).collect();
        if decided.is_empty() {
            return Err(ServiceError::NothingDecided);
        }
        let images = dest.join(IMAGE_DIR);
        std::fs::create_dir_all(&images).map_err(|e| ServiceError::io(&images, e))?;
        let mut records = Vec::with_capacity(decided.len());
        for s in decided {
            let rel = PathBuf::from(IMAGE_DIR).join(format!("{}.ppm", s.id));
            let (from, to) = (self.dir.join(&s.image), dest.join(&rel));
            std::fs::copy(&from, &to).map_err(|e| ServiceError::io(&from, e))?;
            let label = s.decision.as_ref().expect("decided submissions carry a decision").final_label;
            records.push(SampleRecord { id: s.id.clone(), path: rel, label, origin: Origin::Reviewed });
        }
        let m = DatasetManifest::new(dest, records)?;
        m.save_in_root()?;
        Ok(m)
    }
}
