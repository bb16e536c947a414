use std::collections::BTreeMap;

use aes::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};

use super::message::{MessageKind, ProtocolMessage};
use super::{Key128, NodeId, Reject, Timestamp, KEY_BYTES};

pub const TAG_LEN: usize = 16;
pub type Tag = [u8; TAG_LEN];

type HmacSha256 = Hmac<Sha256>;
type Aes128Ctr = ctr::Ctr128BE<aes::Aes128>;

const LABEL_ENC: u8 = 0x01;
const LABEL_MAC: u8 = 0x02;

/// HMAC-SHA-256 truncated to 128 bits.
pub fn mac(key: &Key128, data: &[u8]) -> Tag {
    let mut m = HmacSha256::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    m.update(data);
    let full = m.finalize().into_bytes();
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&full[..TAG_LEN]);
    tag
}

/// Constant-time tag comparison.
pub fn verify_mac(key: &Key128, data: &[u8], tag: &Tag) -> bool {
    let mut m = HmacSha256::new_from_slice(key.as_bytes()).expect("HMAC accepts any key length");
    m.update(data);
    m.verify_truncated_left(tag).is_ok()
}

/// Strict monotonic freshness: accept iff `ts > last_accepted`.
pub fn check_freshness(last_accepted: Timestamp, ts: Timestamp) -> bool {
    ts > last_accepted
}

/// `k_msi = k_mn ^ r_si`.
pub fn derive_node_key(k_mn: &Key128, r_si: &Key128) -> Key128 {
    k_mn.xor(r_si)
}

/// `ks = k_mn ^ r_u`.
pub fn derive_group_key(k_mn: &Key128, r_u: &Key128) -> Key128 {
    k_mn.xor(r_u)
}

fn subkey(key: &Key128, label: u8) -> Key128 {
    let mut h = Sha256::new();
    h.update([label]);
    h.update(key.as_bytes());
    let d = h.finalize();
    let mut k = [0u8; KEY_BYTES];
    k.copy_from_slice(&d[..KEY_BYTES]);
    Key128(k)
}

fn keystream_iv(sender: NodeId, ts: Timestamp) -> [u8; 16] {
    let mut iv = [0u8; 16];
    iv[..2].copy_from_slice(&sender.0.to_be_bytes());
    iv[2..10].copy_from_slice(&ts.0.to_be_bytes());
    iv
}

/// Encrypt-then-MAC: AES-128-CTR under one label-derived subkey, tag under
/// the other. The counter block starts from `sender || ts`, which is unique
/// per sender because timestamps strictly increase.
pub fn seal_data(key: &Key128, sender: NodeId, plaintext: &[u8], ts: Timestamp) -> ProtocolMessage {
    let enc = subkey(key, LABEL_ENC);
    let mut body = plaintext.to_vec();
    Aes128Ctr::new(enc.as_bytes().into(), &keystream_iv(sender, ts).into())
        .apply_keystream(&mut body);
    ProtocolMessage::authenticated(
        MessageKind::Data,
        sender,
        NodeId::NONE,
        ts,
        body,
        &subkey(key, LABEL_MAC),
    )
}

/// Opens a Data message sealed under `key`. Freshness is checked against
/// `last_accepted` (none yet: anything is fresh) before the tag.
pub fn open_data(
    key: &Key128,
    msg: &ProtocolMessage,
    last_accepted: Option<Timestamp>,
) -> Result<Vec<u8>, Reject> {
    if msg.kind != MessageKind::Data {
        return Err(Reject::Unexpected);
    }
    if last_accepted.is_some_and(|last| !check_freshness(last, msg.ts)) {
        return Err(Reject::StaleTs);
    }
    if !verify_mac(&subkey(key, LABEL_MAC), &msg.mac_input(), &msg.mac) {
        return Err(Reject::BadMac);
    }
    let enc = subkey(key, LABEL_ENC);
    let mut plain = msg.body.clone();
    Aes128Ctr::new(enc.as_bytes().into(), &keystream_iv(msg.sender, msg.ts).into())
        .apply_keystream(&mut plain);
    Ok(plain)
}

/// Last accepted timestamp per `(sender, kind)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreshnessTable {
    last: BTreeMap<(NodeId, MessageKind), Timestamp>,
}

impl FreshnessTable {
    pub fn last_accepted(&self, sender: NodeId, kind: MessageKind) -> Option<Timestamp> {
        self.last.get(&(sender, kind)).copied()
    }

    /// The first message of a `(sender, kind)` pair is always fresh.
    pub fn is_fresh(&self, msg: &ProtocolMessage) -> bool {
        self.last_accepted(msg.sender, msg.kind)
            .is_none_or(|last| check_freshness(last, msg.ts))
    }

    pub fn accept(&mut self, msg: &ProtocolMessage) {
        self.last.insert((msg.sender, msg.kind), msg.ts);
    }
}
