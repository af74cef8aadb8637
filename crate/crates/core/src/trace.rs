//! Execution records: one event per logical step, written as JSON Lines.
//!
//! The last line of a serialized trace is a footer recording whether the
//! run reached quiescence, which the liveness check requires.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{EdgeTimestamp, UpdateId, Value};
use crate::topology::{ClientId, RegisterId, ReplicaId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A replica issued an update; `timestamp` is its timestamp after `advance`.
    Issue {
        replica: ReplicaId,
        update: UpdateId,
        register: RegisterId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<ClientId>,
        timestamp: EdgeTimestamp,
    },
    Send {
        from: ReplicaId,
        to: ReplicaId,
        update: UpdateId,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        metadata_only: bool,
    },
    Deliver {
        replica: ReplicaId,
        update: UpdateId,
    },
    /// The delivered update could not be applied yet; `timestamp` is the
    /// receiver's.
    Buffer {
        replica: ReplicaId,
        update: UpdateId,
        timestamp: EdgeTimestamp,
    },
    /// `timestamp` is the receiver's after the merge.
    Apply {
        replica: ReplicaId,
        update: UpdateId,
        timestamp: EdgeTimestamp,
    },
    ClientRequest {
        client: ClientId,
        replica: ReplicaId,
        op: RequestKind,
        register: RegisterId,
    },
    /// The replica answered the client; for writes `update` names the issued update.
    ClientServe {
        client: ClientId,
        replica: ReplicaId,
        op: RequestKind,
        register: RegisterId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        update: Option<UpdateId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        value: Option<Value>,
    },
}

impl Event {
    /// The replica whose state the event describes, if any.
    pub fn replica(&self) -> Option<ReplicaId> {
        match self {
            Event::Issue { replica, .. }
            | Event::Deliver { replica, .. }
            | Event::Buffer { replica, .. }
            | Event::Apply { replica, .. }
            | Event::ClientRequest { replica, .. }
            | Event::ClientServe { replica, .. } => Some(*replica),
            Event::Send { from, .. } => Some(*from),
        }
    }
}

/// Receives protocol events in the order they happen.
pub trait EventSink {
    fn event(&mut self, e: Event);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn event(&mut self, _: Event) {}
}

impl EventSink for Vec<Event> {
    fn event(&mut self, e: Event) {
        self.push(e);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub step: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub steps: Vec<Step>,
    /// Step number at which the quiescence phase began.
    pub quiescence_start: Option<u64>,
    /// True when the run finished its quiescence phase.
    pub quiescent: bool,
}

impl EventSink for Trace {
    fn event(&mut self, e: Event) {
        let step = self.steps.len() as u64 + 1;
        self.steps.push(Step { step, event: e });
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Footer {
    quiescence: FooterBody,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FooterBody {
    start: Option<u64>,
    complete: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Trace {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.steps.iter().map(|s| &s.event)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mark_quiescence_start(&mut self) {
        self.quiescence_start = Some(self.steps.len() as u64 + 1);
    }

    /// One event per line followed by the footer line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("events serialize"));
            out.push('\n');
        }
        let footer = Footer {
            quiescence: FooterBody {
                start: self.quiescence_start,
                complete: self.quiescent,
            },
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&footer).expect("footer serializes"));
        out
    }

    /// Parses JSON Lines. A trace without a footer is accepted and treated as
    /// not quiescent.
    pub fn from_jsonl(src: &str) -> Result<Trace, TraceError> {
        let mut t = Trace::default();
        let mut footer_seen = false;
        for (k, line) in src.lines().enumerate() {
            let line_no = k + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| TraceError::Parse {
                line: line_no,
                message,
            };
            if footer_seen {
                return Err(err("event after the quiescence footer".into()));
            }
            let v: serde_json::Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            if v.get("quiescence").is_some() {
                let f: Footer = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
                t.quiescence_start = f.quiescence.start;
                t.quiescent = f.quiescence.complete;
                footer_seen = true;
                continue;
            }
            let s: Step = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            if s.step != t.steps.len() as u64 + 1 {
                return Err(err(format!(
                    "expected step {}, found {}",
                    t.steps.len() + 1,
                    s.step
                )));
            }
            t.steps.push(s);
        }
        Ok(t)
    }
}
