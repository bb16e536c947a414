//! Energy accounting, leader election and handover.
//!
//! A leader whose energy first drops below the threshold broadcasts an
//! ElectionCall. Every slave votes for its highest-energy neighbor, the
//! leader assigns the role to the plurality winner, forwards the stored
//! `r_si` commitments to it, and the new leader re-keys the whole body.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzycommit::Commitment;
use crate::protocol::{
    derive_node_key, MessageKind, NodeId, NodeState, ProtocolError, ProtocolMessage, Reject, Role,
    Timestamp,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ElectionError {
    #[error("unknown energy action {0:?}")]
    UnknownAction(String),
    #[error("no eligible neighbor to vote for")]
    EmptyView,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Send,
    Receive,
    CommitOp,
    DecommitOp,
    MacOp,
    IdleTick,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Send,
        Action::Receive,
        Action::CommitOp,
        Action::DecommitOp,
        Action::MacOp,
        Action::IdleTick,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Send => "send",
            Action::Receive => "receive",
            Action::CommitOp => "commit_op",
            Action::DecommitOp => "decommit_op",
            Action::MacOp => "mac_op",
            Action::IdleTick => "idle_tick",
        }
    }
}

impl FromStr for Action {
    type Err = ElectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ElectionError::UnknownAction(s.to_string()))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub send: f64,
    pub receive: f64,
    pub commit_op: f64,
    pub decommit_op: f64,
    pub mac_op: f64,
    pub idle_tick: f64,
}

impl CostTable {
    pub fn cost(&self, action: Action) -> f64 {
        match action {
            Action::Send => self.send,
            Action::Receive => self.receive,
            Action::CommitOp => self.commit_op,
            Action::DecommitOp => self.decommit_op,
            Action::MacOp => self.mac_op,
            Action::IdleTick => self.idle_tick,
        }
    }
}

impl Default for CostTable {
    fn default() -> Self {
        Self {
            send: 0.05,
            receive: 0.02,
            commit_op: 0.01,
            decommit_op: 0.01,
            mac_op: 0.002,
            idle_tick: 0.001,
        }
    }
}

/// Battery level of one node. The level only decreases and is clamped at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub level: f64,
    pub threshold: f64,
    pub costs: CostTable,
    crossed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consumption {
    /// Amount actually removed (less than the cost when clamped).
    pub debited: f64,
    /// True only on the call where the level first drops below the threshold.
    pub crossed: bool,
}

impl EnergyState {
    pub fn new(level: f64, threshold: f64, costs: CostTable) -> Self {
        Self {
            level,
            threshold,
            costs,
            crossed: level < threshold,
        }
    }

    pub fn below_threshold(&self) -> bool {
        self.level < self.threshold
    }

    pub fn consume(&mut self, action: Action) -> Consumption {
        self.consume_n(action, 1)
    }

    pub fn consume_n(&mut self, action: Action, times: u32) -> Consumption {
        let cost = self.costs.cost(action) * f64::from(times);
        let before = self.level;
        self.level = (self.level - cost).max(0.0);
        let crossed = !self.crossed && self.level < self.threshold;
        if crossed {
            self.crossed = true;
        }
        Consumption {
            debited: before - self.level,
            crossed,
        }
    }

    /// Looks up the action by name; unknown names are an error.
    pub fn consume_named(&mut self, action: &str) -> Result<Consumption, ElectionError> {
        Ok(self.consume(action.parse()?))
    }
}

/// Highest-energy neighbor, ties to the lowest id. The leader and the voter
/// itself are never eligible.
pub fn cast_vote(
    voter: NodeId,
    leader: NodeId,
    view: &BTreeMap<NodeId, f64>,
) -> Result<NodeId, ElectionError> {
    view.iter()
        .filter(|(id, _)| **id != voter && **id != leader)
        .fold(None, |best: Option<(NodeId, f64)>, (&id, &e)| match best {
            Some((_, be)) if be >= e => best,
            _ => Some((id, e)),
        })
        .map(|(id, _)| id)
        .ok_or(ElectionError::EmptyView)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionRound {
    pub round_id: u32,
    pub call_ts: Timestamp,
    pub votes: BTreeMap<NodeId, NodeId>,
    pub result: Option<NodeId>,
}

impl ElectionRound {
    pub fn new(round_id: u32, call_ts: Timestamp) -> Self {
        Self {
            round_id,
            call_ts,
            votes: BTreeMap::new(),
            result: None,
        }
    }

    /// Records a vote; a second vote from the same voter is refused.
    pub fn record_vote(&mut self, voter: NodeId, candidate: NodeId) -> bool {
        if self.result.is_some() || self.votes.contains_key(&voter) {
            return false;
        }
        self.votes.insert(voter, candidate);
        true
    }

    /// Plurality winner; ties go to the higher reported energy, then the lower
    /// id. Sets the result once; `None` when no votes arrived.
    pub fn tally(&mut self, energy: &BTreeMap<NodeId, f64>) -> Option<NodeId> {
        if let Some(r) = self.result {
            return Some(r);
        }
        let mut counts: BTreeMap<NodeId, usize> = BTreeMap::new();
        for c in self.votes.values() {
            *counts.entry(*c).or_default() += 1;
        }
        let e = |id: &NodeId| energy.get(id).copied().unwrap_or(f64::NEG_INFINITY);
        let winner = counts
            .into_iter()
            .fold(None, |best: Option<(NodeId, usize)>, (id, n)| match best {
                Some((bid, bn)) if bn > n || (bn == n && e(&bid) >= e(&id)) => best,
                _ => Some((id, n)),
            })
            .map(|(id, _)| id);
        self.result = winner;
        winner
    }
}

fn node_id_body(body: &[u8]) -> Result<NodeId, Reject> {
    let b: [u8; 2] = body.try_into().map_err(|_| Reject::Malformed)?;
    Ok(NodeId(u16::from_be_bytes(b)))
}

impl NodeState {
    pub fn election(&self) -> Option<&ElectionRound> {
        self.election.as_ref()
    }

    /// Leader: opens a round and returns the ElectionCall (tagged under `ks`).
    pub fn build_election_call(
        &mut self,
        round_id: u32,
        ts: Timestamp,
    ) -> Result<ProtocolMessage, ProtocolError> {
        if !self.is_leader() {
            return Err(ProtocolError::NotLeader);
        }
        let ks = self.keys.ks.ok_or(ProtocolError::NotKeyed)?;
        self.election = Some(ElectionRound::new(round_id, ts));
        self.ops.macs += 1;
        Ok(ProtocolMessage::authenticated(
            MessageKind::ElectionCall,
            self.id,
            NodeId::NONE,
            ts,
            round_id.to_be_bytes().to_vec(),
            &ks,
        ))
    }

    /// Slave: returns the round id of an authentic, fresh ElectionCall.
    pub fn process_election_call(&mut self, msg: &ProtocolMessage) -> Result<u32, Reject> {
        if msg.kind != MessageKind::ElectionCall {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if self.is_leader() || msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let ks = self.keys.ks.ok_or(Reject::Unexpected)?;
        if !self.verify(msg, &ks) {
            return Err(Reject::BadMac);
        }
        let round: [u8; 4] = msg.body.as_slice().try_into().map_err(|_| Reject::Malformed)?;
        let round = u32::from_be_bytes(round);
        if !self.voted.insert((msg.sender, round)) {
            return Err(Reject::Unexpected);
        }
        self.freshness.accept(msg);
        Ok(round)
    }

    /// Slave: votes for the best neighbor in `view`, tagged under `k_msi`.
    pub fn build_vote(
        &mut self,
        view: &BTreeMap<NodeId, f64>,
        ts: Timestamp,
    ) -> Result<ProtocolMessage, ElectionError> {
        let k_msi = self.keys.k_msi.ok_or(ProtocolError::NotKeyed)?;
        let candidate = cast_vote(self.id, self.leader, view)?;
        self.ops.macs += 1;
        Ok(ProtocolMessage::authenticated(
            MessageKind::Vote,
            self.id,
            NodeId::NONE,
            ts,
            candidate.0.to_be_bytes().to_vec(),
            &k_msi,
        ))
    }

    /// Leader: records an authentic vote in the open round.
    pub fn process_vote(&mut self, msg: &ProtocolMessage) -> Result<(NodeId, NodeId), Reject> {
        if msg.kind != MessageKind::Vote {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if !self.is_leader() || self.election.is_none() {
            return Err(Reject::Unexpected);
        }
        let key = *self.keys.k_msi_map.get(&msg.sender).ok_or(Reject::BadMac)?;
        if !self.verify(msg, &key) {
            return Err(Reject::BadMac);
        }
        let candidate = node_id_body(&msg.body)?;
        let round = self.election.as_mut().expect("checked above");
        if !round.record_vote(msg.sender, candidate) {
            return Err(Reject::Unexpected);
        }
        self.freshness.accept(msg);
        Ok((msg.sender, candidate))
    }

    /// Leader: tallies the open round. Returns the Assign message (tagged under
    /// `ks`), or `None` when nobody voted and the leader keeps the role.
    pub fn tally_and_assign(
        &mut self,
        energy_view: &BTreeMap<NodeId, f64>,
        ts: Timestamp,
    ) -> Result<Option<ProtocolMessage>, ProtocolError> {
        if !self.is_leader() {
            return Err(ProtocolError::NotLeader);
        }
        let ks = self.keys.ks.ok_or(ProtocolError::NotKeyed)?;
        let Some(round) = self.election.as_mut() else {
            return Ok(None);
        };
        let Some(winner) = round.tally(energy_view) else {
            log::info!("{}: election round {} got no votes, keeping role", self.id, round.round_id);
            self.election = None;
            return Ok(None);
        };
        self.ops.macs += 1;
        Ok(Some(ProtocolMessage::authenticated(
            MessageKind::Assign,
            self.id,
            NodeId::NONE,
            ts,
            winner.0.to_be_bytes().to_vec(),
            &ks,
        )))
    }

    /// Slave: applies an authentic Assign. The assignee takes the leader role.
    pub fn process_assign(&mut self, msg: &ProtocolMessage) -> Result<NodeId, Reject> {
        if msg.kind != MessageKind::Assign {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if self.is_leader() || msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let ks = self.keys.ks.ok_or(Reject::Unexpected)?;
        if !self.verify(msg, &ks) {
            return Err(Reject::BadMac);
        }
        let assignee = node_id_body(&msg.body)?;
        self.freshness.accept(msg);
        self.leader = assignee;
        if assignee == self.id {
            self.role = Role::Leader;
        }
        Ok(assignee)
    }

    /// Former leader: hands the role to `new_leader`. The pairwise keys are
    /// kept until the new leader re-keys, so in-flight traffic can still be
    /// opened.
    pub fn step_down(&mut self, new_leader: NodeId) {
        self.role = Role::Slave;
        self.leader = new_leader;
        self.election = None;
    }

    /// Former leader: wraps the stored RsiReply commitment of `slave`,
    /// tagged under the current `ks`.
    pub fn build_handover_forward(
        &mut self,
        slave: NodeId,
        ts: Timestamp,
    ) -> Result<ProtocolMessage, ProtocolError> {
        let ks = self.keys.ks.ok_or(ProtocolError::NotKeyed)?;
        let commitment: &Commitment = self
            .stored_replies
            .get(&slave)
            .ok_or(ProtocolError::NoStoredCommitment(slave))?;
        let body = commitment.to_bytes();
        self.ops.macs += 1;
        Ok(ProtocolMessage::authenticated(
            MessageKind::HandoverForward,
            self.id,
            slave,
            ts,
            body,
            &ks,
        ))
    }

    /// New leader: recovers the forwarded `r_si` with its own witness and
    /// derives the pairwise key under the outgoing `k_mn`, so traffic sealed
    /// before the re-key still opens.
    pub fn process_handover_forward(&mut self, msg: &ProtocolMessage) -> Result<NodeId, Reject> {
        if msg.kind != MessageKind::HandoverForward {
            return Err(Reject::Unexpected);
        }
        if !self.freshness.is_fresh(msg) {
            return Err(Reject::StaleTs);
        }
        if !self.is_leader() || msg.sender == self.id {
            return Err(Reject::Unexpected);
        }
        let (Some(ks), Some(k_mn)) = (self.keys.ks, self.keys.k_mn) else {
            return Err(Reject::Unexpected);
        };
        if !self.verify(msg, &ks) {
            return Err(Reject::BadMac);
        }
        let r_si = self.try_open_commitment(&msg.body, msg.ts)?;
        self.freshness.accept(msg);
        let slave = msg.extra_id;
        self.keys.peer_nonces.insert(slave, r_si);
        self.keys.k_msi_map.insert(slave, derive_node_key(&k_mn, &r_si));
        Ok(slave)
    }
}
