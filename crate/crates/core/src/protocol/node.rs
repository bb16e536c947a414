use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::crypto::{derive_group_key, derive_node_key, open_data, seal_data, verify_mac, FreshnessTable};
use super::message::{MessageKind, ProtocolMessage};
use super::{Key128, NodeId, ProtocolError, Reject, Timestamp};
use crate::bits::BitString;
use crate::election::ElectionRound;
use crate::fuzzycommit::{self, CodeParams, Commitment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Slave,
}

/// Link class of a Data message, which selects the sealing key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Slave and leader, under `k_msi`.
    Pairwise,
    /// Slave and slave, under `ks`.
    Group,
    /// Leader and personal server, under `kn`.
    Server,
}

/// Cryptographic operations performed since the last [`NodeState::take_ops`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpTally {
    pub commits: u32,
    pub decommits: u32,
    pub macs: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyAcceptance {
    pub k_mn: Key128,
    /// False when the message re-sent a key the node already held.
    pub rekeyed: bool,
}

/// A node's key material. Every re-key overwrites the whole hierarchy and
/// bumps `key_epoch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyRing {
    pub kn: Key128,
    pub r_u: Key128,
    pub r_si: Option<Key128>,
    pub k_mn: Option<Key128>,
    pub k_msi: Option<Key128>,
    pub ks: Option<Key128>,
    /// Leader side: nonces recovered from each slave and the derived pairwise keys.
    pub peer_nonces: BTreeMap<NodeId, Key128>,
    pub k_msi_map: BTreeMap<NodeId, Key128>,
    pub key_epoch: u64,
}

impl KeyRing {
    pub fn new(kn: Key128, r_u: Key128) -> Self {
        Self {
            kn,
            r_u,
            r_si: None,
            k_mn: None,
            k_msi: None,
            ks: None,
            peer_nonces: BTreeMap::new(),
            k_msi_map: BTreeMap::new(),
            key_epoch: 0,
        }
    }

    fn rekey_leader(&mut self, k_mn: Key128) {
        self.k_mn = Some(k_mn);
        self.ks = Some(derive_group_key(&k_mn, &self.r_u));
        self.r_si = None;
        self.k_msi = None;
        self.peer_nonces.clear();
        self.k_msi_map.clear();
        self.key_epoch += 1;
    }

    fn rekey_slave(&mut self, k_mn: Key128, r_si: Key128) {
        self.k_mn = Some(k_mn);
        self.ks = Some(derive_group_key(&k_mn, &self.r_u));
        self.r_si = Some(r_si);
        self.k_msi = Some(derive_node_key(&k_mn, &r_si));
        self.peer_nonces.clear();
        self.k_msi_map.clear();
        self.key_epoch += 1;
    }

    pub(crate) fn register_peer(&mut self, peer: NodeId, k_mn: &Key128, r_si: Key128) -> Key128 {
        let k = derive_node_key(k_mn, &r_si);
        self.peer_nonces.insert(peer, r_si);
        self.k_msi_map.insert(peer, k);
        k
    }

    /// Recomputes every derived key from `k_mn`, `r_u` and the nonces and
    /// compares with the stored values.
    pub fn hierarchy_consistent(&self) -> bool {
        let Some(k_mn) = self.k_mn else {
            return self.ks.is_none() && self.k_msi.is_none() && self.k_msi_map.is_empty();
        };
        if self.ks != Some(derive_group_key(&k_mn, &self.r_u)) {
            return false;
        }
        if self.k_msi != self.r_si.map(|r| derive_node_key(&k_mn, &r)) {
            return false;
        }
        self.k_msi_map.len() == self.peer_nonces.len()
            && self
                .peer_nonces
                .iter()
                .all(|(id, r)| self.k_msi_map.get(id) == Some(&derive_node_key(&k_mn, r)))
    }
}

/// State owned by one sensor. Handlers either accept a message and update
/// state, or return a [`Reject`] and leave the key ring untouched.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub role: Role,
    pub leader: NodeId,
    pub keys: KeyRing,
    pub(crate) code: CodeParams,
    epoch_period: u64,
    witnesses: BTreeMap<u64, BitString>,
    pub(crate) freshness: FreshnessTable,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) stored_replies: BTreeMap<NodeId, Commitment>,
    pub(crate) ops: OpTally,
    clock: Option<Timestamp>,
    pub(crate) election: Option<ElectionRound>,
    pub(crate) voted: BTreeSet<(NodeId, u32)>,
}

impl NodeState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: NodeId,
        leader: NodeId,
        kn: Key128,
        r_u: Key128,
        code: CodeParams,
        epoch_period: u64,
        rng_seed: u64,
    ) -> Self {
        assert!(epoch_period > 0, "epoch period must be positive");
        Self {
            id,
            role: if id == leader { Role::Leader } else { Role::Slave },
            leader,
            keys: KeyRing::new(kn, r_u),
            code,
            epoch_period,
            witnesses: BTreeMap::new(),
            freshness: FreshnessTable::default(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            stored_replies: BTreeMap::new(),
            ops: OpTally::default(),
            clock: None,
            election: None,
            voted: BTreeSet::new(),
        }
    }

    pub fn is_leader(&self) -> bool {
        self.role == Role::Leader
    }

    /// Next strictly increasing timestamp at `tick`.
    pub fn next_timestamp(&mut self, tick: u64) -> Timestamp {
        let ts = match self.clock {
            Some(last) if last.tick() >= tick => Timestamp(last.0 + 1),
            _ => Timestamp::new(tick, 0),
        };
        self.clock = Some(ts);
        ts
    }

    /// Installs the witness for `epoch`; the previous epoch's witness is kept
    /// for messages committed just before the boundary.
    pub fn install_witness(&mut self, epoch: u64, bits: BitString) {
        self.witnesses.insert(epoch, bits);
        self.witnesses.retain(|&e, _| e + 1 >= epoch);
    }

    pub fn witness_for(&self, ts: Timestamp) -> Option<&BitString> {
        self.witnesses.get(&(ts.tick() / self.epoch_period))
    }

    pub fn take_ops(&mut self) -> OpTally {
        std::mem::take(&mut self.ops)
    }

    pub fn code(&self) -> &CodeParams {
        &self.code
    }

    pub fn stored_reply(&self, slave: NodeId) -> Option<&Commitment> {
        self.stored_replies.get(&slave)
    }

    pub fn stored_reply_ids(&self) -> Vec<NodeId> {
        self.stored_replies.keys().copied().collect()
    }

    fn commit_key(&self, ts: Timestamp) -> Result<BitString, ProtocolError> {
        let epoch = ts.tick() / self.epoch_period;
        let witness = self
            .witnesses
            .get(&epoch)
            .ok_or(ProtocolError::MissingWitness(epoch))?;
        let mask = fuzzycommit::expand(&self.code, &self.keys.r_u.to_bits())?;
        Ok(witness.xor(&mask).expect("witness length equals code length"))
    }

    pub(crate) fn commit_secret(
        &mut self,
        secret: &Key128,
        ts: Timestamp,
    ) -> Result<Commitment, ProtocolError> {
        let key = self.commit_key(ts)?;
        self.ops.commits += 1;
        Ok(fuzzycommit::commit(&self.code, &secret.to_bits(), &key)?)
    }

    pub(crate) fn open_secret(
        &mut self,
        commitment: &Commitment,
        ts: Timestamp,
    ) -> Result<Key128, Reject> {
        let key = self.commit_key(ts).map_err(|_| Reject::DecommitFailed)?;
        self.ops.decommits += 1;
        let payload = fuzzycommit::decommit(commitment, &key).map_err(|_| Reject::DecommitFailed)?;
        Key128::from_bits(&payload).ok_or(Reject::DecommitFailed)
    }

    /// Attempts to open a serialized commitment committed at `ts` with this
    /// node's own witness. Used by eavesdropping adversaries.
    pub fn try_open_commitment(&mut self, body: &[u8], ts: Timestamp) -> Result<Key128, Reject> {
        let c = Commitment::from_bytes(self.code, body).map_err(|_| Reject::Malformed)?;
        self.open_secret(&c, ts)
    }

    fn authenticated(
        &mut self,
        kind: MessageKind,
        extra_id: NodeId,
        ts: Timestamp,
        body: Vec<u8>,
        key: &Key128,
    ) -> ProtocolMessage {
        self.ops.macs += 1;
        ProtocolMessage::authenticated(kind, self.id, extra_id, ts, body, key)
    }

    pub(crate) fn verify(&mut self, msg: &ProtocolMessage, key: &Key128) -> bool {
        self.ops.macs += 1;
        verify_mac(key, &msg.mac_input(), &msg.mac)
    }

    /// Leader: draws a fresh `k_mn`, installs the new key hierarchy and
    /// returns the KeyDistribute message committing it.
    pub fn build_key_distribute(&mut self, ts: Timestamp) -> Result<ProtocolMessage, ProtocolError> {
        let k_mn = Key128::random(&mut self.rng);
        self.build_key_distribute_with(k_mn, ts)
    }

    pub fn build_key_distribute_with(
        &mut self,
        k_mn: Key128,
        ts: Timestamp,
    ) -> Result<ProtocolMessage, ProtocolError> {
        if !self.is_leader() {
            return Err(ProtocolError::NotLeader);
        }
        let commitment = self.commit_secret(&k_mn, ts)?;
        self.keys.rekey_leader(k_mn);
        self.stored_replies.clear();
        Ok(self.authenticated(
            MessageKind::KeyDistribute,
            NodeId::NONE,
            ts,
            commitment.to_bytes(),
            &k_mn,
        ))
    }

    /// Leader: re-commits the current `k_mn` under the current witness.
    pub fn redistribute_key(&mut self, ts: Timestamp) -> Result<ProtocolMessage, ProtocolError> {
        if !self.is_leader() {
            return Err(ProtocolError::NotLeader);
        }
        let k_mn = self.keys.k_mn.ok_or(ProtocolError::NotKeyed)?;
        let commitment = self.commit_secret(&k_mn, ts)?;
        Ok(self.authenticated(
            MessageKind::KeyDistribute,
            NodeId::NONE,
            ts,
            commitment.to_bytes(),
            &k_mn,
        ))
    }

    /// Slave: freshness, then decommitment with `x_si ^ expand(r_u)`, then
    /// the MAC under the recovered key.
    pub fn process_key_distribute(&mut self, msg: &ProtocolMessage) -> Result<KeyAcceptance, Reject> {
        if msg.kind != MessageKind::KeyDistribute {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if self.is_leader() || msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let commitment = Commitment::from_bytes(self.code, &msg.body).map_err(|_| Reject::Malformed)?;
        let k_mn = self.open_secret(&commitment, msg.ts)?;
        if !self.verify(msg, &k_mn) {
            return Err(Reject::BadMac);
        }
        self.freshness.accept(msg);
        self.leader = msg.sender;
        let rekeyed = self.keys.k_mn != Some(k_mn);
        if rekeyed {
            let r_si = Key128::random(&mut self.rng);
            self.keys.rekey_slave(k_mn, r_si);
            self.stored_replies.clear();
        }
        Ok(KeyAcceptance { k_mn, rekeyed })
    }

    /// Slave: commits `r_si` under `x_si ^ expand(r_u)`, tagged under `k_mn`.
    pub fn build_rsi_reply(&mut self, ts: Timestamp) -> Result<ProtocolMessage, ProtocolError> {
        let (Some(k_mn), Some(r_si)) = (self.keys.k_mn, self.keys.r_si) else {
            return Err(ProtocolError::NotKeyed);
        };
        let commitment = self.commit_secret(&r_si, ts)?;
        Ok(self.authenticated(
            MessageKind::RsiReply,
            NodeId::NONE,
            ts,
            commitment.to_bytes(),
            &k_mn,
        ))
    }

    /// Leader: freshness, MAC under `k_mn`, then decommitment of `r_si`.
    /// The commitment is kept for a later handover.
    pub fn process_rsi_reply(&mut self, msg: &ProtocolMessage) -> Result<(NodeId, Key128), Reject> {
        if msg.kind != MessageKind::RsiReply {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if !self.is_leader() || msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let k_mn = self.keys.k_mn.ok_or(Reject::Unexpected)?;
        if !self.verify(msg, &k_mn) {
            return Err(Reject::BadMac);
        }
        let commitment = Commitment::from_bytes(self.code, &msg.body).map_err(|_| Reject::Malformed)?;
        let r_si = self.open_secret(&commitment, msg.ts)?;
        self.freshness.accept(msg);
        let k_msi = self.keys.register_peer(msg.sender, &k_mn, r_si);
        self.stored_replies.insert(msg.sender, commitment);
        Ok((msg.sender, k_msi))
    }

    fn link_key(&self, link: Link, to: NodeId) -> Result<Key128, ProtocolError> {
        match link {
            Link::Server => Ok(self.keys.kn),
            Link::Group => self.keys.ks.ok_or(ProtocolError::NotKeyed),
            Link::Pairwise => {
                if let Some(k) = self.keys.k_msi_map.get(&to) {
                    Ok(*k)
                } else if to == self.leader {
                    self.keys.k_msi.ok_or(ProtocolError::NotKeyed)
                } else {
                    Err(ProtocolError::UnknownPeer(to))
                }
            }
        }
    }

    pub fn seal(
        &mut self,
        link: Link,
        to: NodeId,
        plaintext: &[u8],
        ts: Timestamp,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let key = self.link_key(link, to)?;
        self.ops.macs += 1;
        Ok(seal_data(&key, self.id, plaintext, ts))
    }

    /// Opens a Data message from another sensor, trying the pairwise key with
    /// the sender first and then the group key.
    pub fn receive_data(&mut self, msg: &ProtocolMessage) -> Result<Vec<u8>, Reject> {
        if msg.kind != MessageKind::Data {
            return Err(Reject::Unexpected);
        }
        let last = self.freshness.last_accepted(msg.sender, msg.kind);
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let mut candidates = Vec::with_capacity(2);
        if let Some(k) = self.keys.k_msi_map.get(&msg.sender) {
            candidates.push(*k);
        } else if msg.sender == self.leader {
            candidates.extend(self.keys.k_msi);
        }
        candidates.extend(self.keys.ks);
        for key in candidates {
            self.ops.macs += 1;
            if let Ok(plain) = open_data(&key, msg, last) {
                self.freshness.accept(msg);
                return Ok(plain);
            }
        }
        Err(Reject::BadMac)
    }
}

/// The personal server: a sink that opens leader traffic under `kn`.
#[derive(Debug, Clone)]
pub struct ServerSink {
    pub id: NodeId,
    kn: Key128,
    freshness: FreshnessTable,
}

impl ServerSink {
    pub fn new(id: NodeId, kn: Key128) -> Self {
        Self {
            id,
            kn,
            freshness: FreshnessTable::default(),
        }
    }

    pub fn receive(&mut self, msg: &ProtocolMessage) -> Result<Vec<u8>, Reject> {
        let last = self.freshness.last_accepted(msg.sender, msg.kind);
        let plain = open_data(&self.kn, msg, last)?;
        self.freshness.accept(msg);
        Ok(plain)
    }
}
