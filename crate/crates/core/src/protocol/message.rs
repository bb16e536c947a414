use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crypto::{mac, Tag, TAG_LEN};
use super::{Key128, NodeId, Timestamp};

/// `kind (1) || sender (2) || extra_id (2) || ts (8) || body_len (4)`.
pub const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum MessageKind {
    KeyDistribute = 1,
    RsiReply = 2,
    HandoverForward = 3,
    ElectionCall = 4,
    Vote = 5,
    Assign = 6,
    Data = 7,
}

impl MessageKind {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            1 => Self::KeyDistribute,
            2 => Self::RsiReply,
            3 => Self::HandoverForward,
            4 => Self::ElectionCall,
            5 => Self::Vote,
            6 => Self::Assign,
            7 => Self::Data,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::KeyDistribute => "key_distribute",
            Self::RsiReply => "rsi_reply",
            Self::HandoverForward => "handover_forward",
            Self::ElectionCall => "election_call",
            Self::Vote => "vote",
            Self::Assign => "assign",
            Self::Data => "data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("message truncated: {0} bytes")]
    Truncated(usize),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("body length {declared} does not match frame ({actual} bytes available)")]
    BodyLength { declared: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub extra_id: NodeId,
    pub ts: Timestamp,
    pub body: Vec<u8>,
    pub mac: Tag,
}

impl ProtocolMessage {
    /// Builds a message whose tag is computed under `key`.
    pub fn authenticated(
        kind: MessageKind,
        sender: NodeId,
        extra_id: NodeId,
        ts: Timestamp,
        body: Vec<u8>,
        key: &Key128,
    ) -> Self {
        let mut msg = Self {
            kind,
            sender,
            extra_id,
            ts,
            body,
            mac: [0; TAG_LEN],
        };
        msg.mac = mac(key, &msg.mac_input());
        msg
    }

    /// Every serialized byte that precedes the tag.
    pub fn mac_input(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.sender.0.to_be_bytes());
        out.extend_from_slice(&self.extra_id.0.to_be_bytes());
        out.extend_from_slice(&self.ts.0.to_be_bytes());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.mac_input();
        out.extend_from_slice(&self.mac);
        out
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.body.len() + TAG_LEN
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(WireError::Truncated(bytes.len()));
        }
        let kind = MessageKind::from_u8(bytes[0]).ok_or(WireError::UnknownKind(bytes[0]))?;
        let sender = NodeId(u16::from_be_bytes([bytes[1], bytes[2]]));
        let extra_id = NodeId(u16::from_be_bytes([bytes[3], bytes[4]]));
        let ts = Timestamp(u64::from_be_bytes(
            bytes[5..13].try_into().expect("8-byte slice"),
        ));
        let declared = u32::from_be_bytes(bytes[13..17].try_into().expect("4-byte slice")) as usize;
        let actual = bytes.len() - HEADER_LEN - TAG_LEN;
        if declared != actual {
            return Err(WireError::BodyLength { declared, actual });
        }
        let body = bytes[HEADER_LEN..HEADER_LEN + declared].to_vec();
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&bytes[HEADER_LEN + declared..]);
        Ok(Self {
            kind,
            sender,
            extra_id,
            ts,
            body,
            mac: tag,
        })
    }
}
