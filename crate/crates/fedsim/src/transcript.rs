//! Ordered record of what the stub services did.
//!
//! Events carry no timings, tokens or secrets, so two runs of the same script
//! on fresh federations produce equal transcripts.

use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A scenario step starting.
    Step { index: usize, actor: String, action: String },
    /// A completed request from `from` to `to`.
    Call {
        from: String,
        to: String,
        method: String,
        path: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        obo: Option<String>,
        /// `grantor/app` when shared application context headers were sent.
        #[serde(skip_serializing_if = "Option::is_none")]
        sac: Option<String>,
        status: u16,
    },
    /// How Systems authorized (or refused) access to a system.
    Decision { system: String, user: String, privilege: String, via: String },
    /// Which login a system resolved to for a user.
    Credential { system: String, user: String, login: String },
    /// An isPermitted query a service made and its answer.
    PermissionCheck { from: String, user: String, permission: String, granted: bool },
    JobState { job: String, state: String },
}

#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<Event>>>);

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, e: Event) {
        self.0.lock().push(e);
    }

    pub fn events(&self) -> Vec<Event> {
        self.0.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events recorded at or after `start`.
    pub fn since(&self, start: usize) -> Vec<Event> {
        self.0.lock()[start..].to_vec()
    }

    pub fn clear(&self) {
        self.0.lock().clear();
    }
}
