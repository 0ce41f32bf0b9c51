use chrono::{DateTime, Utc};
use loadsafe_core::dataset::{ClassLabel, StageLabel};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    RejectedUnusable,
    PendingReview,
    Decided,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::RejectedUnusable, Status::PendingReview, Status::Decided];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::RejectedUnusable => "REJECTED_UNUSABLE",
            Status::PendingReview => "PENDING_REVIEW",
            Status::Decided => "DECIDED",
        }
    }

    pub fn parse(s: &str) -> Option<Status> {
        Status::ALL.into_iter().find(|st| st.as_str().eq_ignore_ascii_case(s))
    }
}

/// A model label with its softmax probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: StageLabel,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub operator_id: String,
    pub claimed_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub submission_id: String,
    pub operator_id: String,
    pub final_label: ClassLabel,
    pub decided_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    /// Stored image, relative to the data directory.
    pub image: String,
    pub received_at: DateTime<Utc>,
    pub stage1: Verdict,
    pub stage2: Option<Verdict>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
    /// Latest claim; it may have expired.
    #[serde(default)]
    pub claim: Option<Claim>,
    #[serde(default)]
    pub decision: Option<ReviewDecision>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Event {
    Submitted(Submission),
    Claimed { submission_id: String, claim: Claim },
    Decided(ReviewDecision),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueMetrics {
    pub counts: std::collections::BTreeMap<Status, usize>,
    pub total: usize,
    /// Share of all submissions rejected at intake; 0 with no submissions.
    pub stage1_rejection_rate: f64,
    /// Pending items under an active lease.
    pub claimed: usize,
    pub last_seq: u64,
}
