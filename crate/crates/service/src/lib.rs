//! Photo intake with immediate stage-1 screening, a persistent review
//! queue for human operators, decision capture and label export.
//!
//! State lives in `<data dir>/events.jsonl` (one event per line, dense
//! sequence numbers) and `<data dir>/images/`. Restarting replays the log.

pub mod clock;
pub mod error;
pub mod http;
pub mod platform;
pub mod store;
pub mod types;

pub use clock::{Clock, ManualClock, SystemClock};
pub use error::{Result, ServiceError};
pub use platform::{Platform, Screener, ServiceConfig};
pub use store::{QueueState, ReviewStore, DEFAULT_LEASE_SECONDS};
pub use types::{Claim, Event, EventRecord, QueueMetrics, ReviewDecision, Status, Submission, Verdict};
