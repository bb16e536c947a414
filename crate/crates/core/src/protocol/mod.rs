//! Key establishment: wire format, keyed primitives and per-node state.

mod crypto;
mod message;
mod node;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitString;
use crate::fuzzycommit::FuzzyError;

pub use crypto::{
    check_freshness, derive_group_key, derive_node_key, mac, open_data, seal_data, verify_mac,
    FreshnessTable, Tag, TAG_LEN,
};
pub use message::{MessageKind, ProtocolMessage, WireError, HEADER_LEN};
pub use node::{KeyAcceptance, KeyRing, Link, NodeState, OpTally, Role, ServerSink};

pub const KEY_BITS: usize = 128;
pub const KEY_BYTES: usize = KEY_BITS / 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    /// Placeholder carried in `extra_id` when a message has no second party.
    pub const NONE: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Sender timestamp. The high 48 bits hold the simulation tick and the low
/// 16 bits a per-sender counter, so a node can emit several messages of the
/// same kind within one tick and still keep its timestamps strictly
/// increasing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const SUB_BITS: u32 = 16;

    pub fn new(tick: u64, sub: u16) -> Self {
        Self((tick << Self::SUB_BITS) | u64::from(sub))
    }

    pub fn tick(&self) -> u64 {
        self.0 >> Self::SUB_BITS
    }
}

/// A 128-bit secret: `kn`, `r_u`, `r_si` and every key derived from them.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Key128(pub [u8; KEY_BYTES]);

impl Key128 {
    pub const ZERO: Key128 = Key128([0; KEY_BYTES]);

    pub fn xor(&self, other: &Key128) -> Key128 {
        let mut out = [0u8; KEY_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(&other.0)) {
            *o = a ^ b;
        }
        Key128(out)
    }

    pub fn to_bits(&self) -> BitString {
        BitString::from_bytes(&self.0, KEY_BITS).expect("16 bytes hold 128 bits")
    }

    pub fn from_bits(bits: &BitString) -> Option<Key128> {
        if bits.len() != KEY_BITS {
            return None;
        }
        let mut k = [0u8; KEY_BYTES];
        k.copy_from_slice(bits.as_bytes());
        Some(Key128(k))
    }

    pub fn random<R: rand::RngCore>(rng: &mut R) -> Key128 {
        let mut k = [0u8; KEY_BYTES];
        rng.fill_bytes(&mut k);
        Key128(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_BYTES] {
        &self.0
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key128({})", hex::encode(self.0))
    }
}

/// Why a received message was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum Reject {
    #[error("stale timestamp")]
    StaleTs,
    #[error("decommitment failed")]
    DecommitFailed,
    #[error("MAC verification failed")]
    BadMac,
    #[error("malformed message")]
    Malformed,
    #[error("message not expected in current state")]
    Unexpected,
}

impl Reject {
    pub const ALL: [Reject; 5] = [
        Reject::StaleTs,
        Reject::DecommitFailed,
        Reject::BadMac,
        Reject::Malformed,
        Reject::Unexpected,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Reject::StaleTs => "stale_ts",
            Reject::DecommitFailed => "decommit_failed",
            Reject::BadMac => "bad_mac",
            Reject::Malformed => "malformed",
            Reject::Unexpected => "unexpected",
        }
    }
}

/// Errors raised while building outgoing messages.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("no biometric witness for epoch {0}")]
    MissingWitness(u64),
    #[error("node has not been keyed yet")]
    NotKeyed,
    #[error("operation requires the leader role")]
    NotLeader,
    #[error("no pairwise key with {0}")]
    UnknownPeer(NodeId),
    #[error("no stored commitment for {0}")]
    NoStoredCommitment(NodeId),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}
