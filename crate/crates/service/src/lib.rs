//! HTTP annotation service for interactive active-learning runs.
//!
//! [`Service::start`] runs the active-learning loop on a background thread. Whenever a cycle
//! selects its queries, the loop blocks until a client has labeled every one of them through
//! `POST /labels`; the run is checkpointed after each cycle and when an annotator stays idle
//! for too long, so a later start resumes exactly where the session stopped.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | GET | `/status` | [`Status`] |
//! | GET | `/queries?cycle=k` | list of [`PendingQuery`] still waiting for labels |
//! | POST | `/labels` | one [`LabelSubmission`] or a list of them, answered by [`LabelAck`] |
//! | GET | `/report` | [`PublicReport`] once the run has finished |
//! | GET | `/scores?cycle=k` | the score table of cycle `k` |
//!
//! Responses never carry machine provenance; annotators see class-level information only.

mod error;
mod http;
mod service;

pub use error::{Result, ServiceError};
pub use http::{bind, router, serve};
pub use service::{
    LabelAck, LabelSubmission, PendingQuery, Phase, PublicCycle, PublicReport, Service,
    ServiceConfig, Status, PARTIAL_LABELS_FILE,
};
