use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::protocol::{MessageKind, Reject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Send,
    Deliver,
    Drop,
    Accept,
    Reject,
    Election,
    Rekey,
}

/// Who produced the bytes of a send or delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Honest,
    Replay,
    Tamper,
    Inject,
    ForeignBody,
}

impl Origin {
    pub fn is_adversarial(&self) -> bool {
        *self != Origin::Honest
    }
}

/// One trace line. Absent values serialize as `null` so every line has the
/// same keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub tick: u64,
    pub seq: u64,
    pub kind: TraceKind,
    pub from: Option<u16>,
    pub to: Option<u16>,
    pub msg: Option<MessageKind>,
    pub origin: Option<Origin>,
    pub reason: Option<Reject>,
    pub digest_hex: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, mut event: TraceEvent) {
        event.seq = self.events.len() as u64;
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// One JSON object per line, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 160);
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
