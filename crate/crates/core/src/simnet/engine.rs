use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::adversary::{Adversary, Injection};
use super::config::{AdversaryMode, ConfigError, Mesh, SimConfig, SERVER_ID};
use super::metrics::{reject_table, EnergySample, Metrics, NodeEnergy};
use super::trace::{digest_hex, Origin, Trace, TraceEvent, TraceKind};
use crate::biokeys::BodySignalModel;
use crate::election::{Action, EnergyState};
use crate::protocol::{
    Key128, Link, MessageKind, NodeId, NodeState, ProtocolMessage, Reject, ServerSink, HEADER_LEN,
};
use crate::rng;

pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

const LATENCY: u64 = 1;

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: Trace,
    pub metrics: Metrics,
    pub nodes: Vec<NodeState>,
}

impl SimOutcome {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(TRACE_FILE), self.trace.to_jsonl())?;
        fs::write(dir.join(METRICS_FILE), self.metrics.to_json_pretty())
    }
}

/// Runs `config` to `max_ticks`.
pub fn run(config: &SimConfig) -> Result<SimOutcome, ConfigError> {
    let mut sim = Simulator::new(config.clone())?;
    sim.run_to(config.max_ticks);
    Ok(sim.finish())
}

#[derive(Debug, Clone)]
struct Delivery {
    from: NodeId,
    to: NodeId,
    bytes: Vec<u8>,
    origin: Origin,
    tamper_bit: Option<usize>,
    send_id: Option<u64>,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver(Delivery),
    VoteTimeout { leader: NodeId, round: u32 },
    AssignCheck { leader: NodeId, round: u32 },
    Retransmit { leader: NodeId, key_epoch: u64 },
    Rekey { leader: NodeId },
}

#[derive(Debug, Clone)]
struct Member {
    state: NodeState,
    energy: EnergyState,
    initial: f64,
    actions: BTreeMap<Action, u64>,
    spent: f64,
    depleted: bool,
    /// Neighbor energies learned from the last beacon.
    view: BTreeMap<NodeId, f64>,
}

/// The discrete-event loop. Time advances in integer ticks; within a tick,
/// queued events run in scheduling order.
#[derive(Debug)]
pub struct Simulator {
    cfg: SimConfig,
    model: BodySignalModel,
    members: Vec<Member>,
    server: ServerSink,
    queue: BTreeMap<(u64, u64), Event>,
    next_seq: u64,
    tick: u64,
    leader: NodeId,
    trace: Trace,
    metrics: Metrics,
    net_rng: ChaCha8Rng,
    adversary: Adversary,
    crossings: Vec<NodeId>,
    round_counter: u32,
    rekey_in_progress: bool,
    announced: Option<(NodeId, u64)>,
    deliveries_per_send: Vec<u8>,
    transcript: Vec<Vec<u8>>,
    keys_seen: HashSet<[u8; 16]>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let model = cfg.body_model();
        let mut body_rng = rng::stream("bsk.body", &[cfg.seed]);
        let kn = Key128::random(&mut body_rng);
        let r_u = Key128::random(&mut body_rng);
        let leader = cfg.initial_leader();
        let members = cfg
            .node_ids()
            .map(|id| {
                let node_seed = rng::stream("bsk.node", &[cfg.seed, u64::from(id.0)]).next_u64();
                let initial = cfg.energy.initial(id);
                Member {
                    state: NodeState::new(
                        id,
                        leader,
                        kn,
                        r_u,
                        cfg.code_params(),
                        cfg.epoch_period_ticks,
                        node_seed,
                    ),
                    energy: EnergyState::new(initial, cfg.energy.threshold, cfg.energy.costs),
                    initial,
                    actions: Action::ALL.iter().map(|a| (*a, 0)).collect(),
                    spent: 0.0,
                    depleted: false,
                    view: BTreeMap::new(),
                }
            })
            .collect();
        let mut metrics = Metrics {
            rejects: reject_table(),
            ..Default::default()
        };
        metrics.adversary.mode = cfg.adversary.mode.as_str().to_string();
        metrics.adversary.rejects = reject_table();
        Ok(Self {
            model,
            members,
            server: ServerSink::new(SERVER_ID, kn),
            queue: BTreeMap::new(),
            next_seq: 0,
            tick: 0,
            leader,
            trace: Trace::default(),
            metrics,
            net_rng: rng::stream("bsk.net", &[cfg.seed]),
            adversary: Adversary::new(&cfg),
            crossings: Vec::new(),
            round_counter: 0,
            rekey_in_progress: false,
            announced: None,
            deliveries_per_send: Vec::new(),
            transcript: Vec::new(),
            keys_seen: HashSet::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// The next tick to execute.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn leader(&self) -> NodeId {
        self.leader
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.members[self.index(id)].state
    }

    pub fn energy(&self, id: NodeId) -> f64 {
        self.members[self.index(id)].energy.level
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn index(&self, id: NodeId) -> usize {
        usize::from(id.0) - 1
    }

    fn is_member(&self, id: NodeId) -> bool {
        (1..=self.cfg.node_count).contains(&id.0)
    }

    fn others(&self, id: NodeId) -> Vec<NodeId> {
        self.cfg.node_ids().filter(|n| *n != id).collect()
    }

    /// Executes ticks until `self.tick() == end`.
    pub fn run_to(&mut self, end: u64) {
        while self.tick < end.min(self.cfg.max_ticks) {
            self.step();
        }
    }

    /// Executes one tick.
    pub fn step(&mut self) {
        let tick = self.tick;
        if tick.is_multiple_of(self.cfg.epoch_period_ticks) {
            self.epoch_boundary(tick);
        }
        if tick.is_multiple_of(self.cfg.beacon_interval_ticks) {
            self.beacon();
        }
        if tick == 0 {
            self.start_rekey(self.leader);
        }
        for id in self.cfg.node_ids() {
            self.charge(id, Action::IdleTick, 1);
        }
        self.handle_crossings();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 != tick {
                break;
            }
            let event = entry.remove();
            self.handle(event);
            self.handle_crossings();
        }
        if tick > 0 && tick.is_multiple_of(self.cfg.data_interval_ticks) && !self.rekey_in_progress {
            self.data_round();
            self.handle_crossings();
        }
        self.check_invariants();
        if tick.is_multiple_of(self.cfg.beacon_interval_ticks) {
            let levels = self.members.iter().map(|m| m.energy.level).collect();
            self.metrics.energy.timeline.push(EnergySample { tick, levels });
        }
        self.tick += 1;
    }

    fn schedule(&mut self, tick: u64, event: Event) {
        self.queue.insert((tick, self.next_seq), event);
        self.next_seq += 1;
    }

    fn record(
        &mut self,
        kind: TraceKind,
        from: Option<NodeId>,
        to: Option<NodeId>,
        msg: Option<MessageKind>,
        origin: Option<Origin>,
        reason: Option<Reject>,
        digest: Option<String>,
    ) {
        self.trace.push(TraceEvent {
            tick: self.tick,
            seq: 0,
            kind,
            from: from.map(|n| n.0),
            to: to.map(|n| n.0),
            msg,
            origin,
            reason,
            digest_hex: digest,
        });
    }

    fn charge(&mut self, id: NodeId, action: Action, times: u32) {
        if times == 0 || !self.is_member(id) {
            return;
        }
        let i = self.index(id);
        let m = &mut self.members[i];
        *m.actions.entry(action).or_default() += u64::from(times);
        let due = m.energy.costs.cost(action) * f64::from(times);
        let c = m.energy.consume_n(action, times);
        m.spent += c.debited;
        if m.energy.level == 0.0 && c.debited < due {
            m.depleted = true;
        }
        if c.crossed {
            self.crossings.push(id);
        }
    }

    fn charge_ops(&mut self, id: NodeId) {
        if !self.is_member(id) {
            return;
        }
        let i = self.index(id);
        let ops = self.members[i].state.take_ops();
        self.charge(id, Action::CommitOp, ops.commits);
        self.charge(id, Action::DecommitOp, ops.decommits);
        self.charge(id, Action::MacOp, ops.macs);
    }

    fn timestamp(&mut self, id: NodeId) -> crate::protocol::Timestamp {
        let tick = self.tick;
        let i = self.index(id);
        self.members[i].state.next_timestamp(tick)
    }

    fn slaves(&self) -> Vec<NodeId> {
        self.others(self.leader)
    }

    /// Puts an honest message on the air.
    fn send(&mut self, from: NodeId, to: NodeId, msg: &ProtocolMessage) {
        let bytes = msg.to_bytes();
        self.charge_ops(from);
        self.charge(from, Action::Send, 1);
        let m = &mut self.metrics.messages;
        m.sent += 1;
        m.bytes_sent += bytes.len() as u64;
        *m.sent_by_kind.entry(msg.kind.as_str().to_string()).or_default() += 1;
        let digest = digest_hex(&bytes);
        self.record(
            TraceKind::Send,
            Some(from),
            Some(to),
            Some(msg.kind),
            Some(Origin::Honest),
            None,
            Some(digest.clone()),
        );
        if self.adversary.mode == AdversaryMode::Eavesdrop {
            self.transcript.push(bytes.clone());
        }
        let slaves = self.slaves();
        for inj in self.adversary.on_send(self.tick, msg, &bytes, to, &slaves) {
            self.inject(LATENCY, inj);
        }
        if self.cfg.drop_rate > 0.0 && self.net_rng.random_bool(self.cfg.drop_rate) {
            self.metrics.messages.dropped += 1;
            self.record(
                TraceKind::Drop,
                Some(from),
                Some(to),
                Some(msg.kind),
                Some(Origin::Honest),
                None,
                Some(digest),
            );
            return;
        }
        let send_id = self.deliveries_per_send.len() as u64;
        self.deliveries_per_send.push(0);
        self.schedule(
            self.tick + LATENCY,
            Event::Deliver(Delivery {
                from,
                to,
                bytes,
                origin: Origin::Honest,
                tamper_bit: None,
                send_id: Some(send_id),
            }),
        );
    }

    fn inject(&mut self, delay: u64, inj: Injection) {
        let claimed = ProtocolMessage::from_bytes(&inj.bytes).ok();
        self.record(
            TraceKind::Send,
            claimed.as_ref().map(|m| m.sender),
            Some(inj.to),
            claimed.as_ref().map(|m| m.kind),
            Some(inj.origin),
            None,
            Some(digest_hex(&inj.bytes)),
        );
        let from = claimed.map(|m| m.sender).unwrap_or(NodeId::NONE);
        self.schedule(
            self.tick + delay,
            Event::Deliver(Delivery {
                from,
                to: inj.to,
                bytes: inj.bytes,
                origin: inj.origin,
                tamper_bit: inj.tamper_bit,
                send_id: None,
            }),
        );
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Deliver(d) => self.deliver(d),
            Event::VoteTimeout { leader, round } => {
                let st = &self.members[self.index(leader)].state;
                let open = st.is_leader()
                    && st
                        .election()
                        .is_some_and(|r| r.round_id == round && r.result.is_none());
                if open {
                    self.tally(leader);
                }
            }
            Event::AssignCheck { leader, round } => {
                let st = &self.members[self.index(leader)].state;
                let pending = st.is_leader()
                    && st
                        .election()
                        .is_some_and(|r| r.round_id == round && r.result.is_some());
                if pending {
                    log::info!("{leader}: assignment of round {round} not taken up, re-sending");
                    self.tally(leader);
                }
            }
            Event::Retransmit { leader, key_epoch } => self.retransmit(leader, key_epoch),
            Event::Rekey { leader } => self.start_rekey(leader),
        }
    }

    fn deliver(&mut self, d: Delivery) {
        if let Some(id) = d.send_id {
            let n = &mut self.deliveries_per_send[id as usize];
            *n += 1;
            if *n > 1 {
                self.metrics.invariants.delivery_violations += 1;
            }
        }
        let honest = !d.origin.is_adversarial();
        if honest {
            self.metrics.messages.delivered += 1;
        } else {
            self.metrics.adversary.attempts += 1;
        }
        self.charge(d.to, Action::Receive, 1);
        let digest = digest_hex(&d.bytes);
        let parsed = ProtocolMessage::from_bytes(&d.bytes);
        let kind = parsed.as_ref().ok().map(|m| m.kind);
        self.record(
            TraceKind::Deliver,
            Some(d.from),
            Some(d.to),
            kind,
            Some(d.origin),
            None,
            Some(digest.clone()),
        );
        let result = match &parsed {
            Ok(msg) => self.dispatch(d.to, msg, d.origin),
            Err(_) => Err(Reject::Malformed),
        };
        self.charge_ops(d.to);
        let (tk, reason) = match result {
            Ok(()) => (TraceKind::Accept, None),
            Err(r) => (TraceKind::Reject, Some(r)),
        };
        self.record(tk, Some(d.from), Some(d.to), kind, Some(d.origin), reason, Some(digest));
        if self.adversary.mode == AdversaryMode::Eavesdrop {
            self.collect_keys();
        }

        if honest {
            if let Some(r) = reason {
                *self.metrics.rejects.entry(r.as_str().to_string()).or_default() += 1;
            }
            let est = &mut self.metrics.establishment;
            match kind {
                Some(MessageKind::KeyDistribute) => {
                    est.key_distribute_deliveries += 1;
                    est.key_distribute_accepts += u64::from(reason.is_none());
                }
                Some(MessageKind::RsiReply) => {
                    est.rsi_reply_deliveries += 1;
                    est.rsi_reply_accepts += u64::from(reason.is_none());
                }
                _ => {}
            }
            if reason.is_none() {
                if let Some((delay, inj)) = self.adversary.on_accept(d.to, &d.bytes) {
                    self.inject(delay, inj);
                }
            }
            return;
        }

        let adv = &mut self.metrics.adversary;
        match reason {
            None => {
                adv.silent_acceptances += 1;
                log::warn!("adversarial {:?} message accepted by {}", d.origin, d.to);
            }
            Some(r) => {
                *adv.rejects.entry(r.as_str().to_string()).or_default() += 1;
                if let Some(bit) = d.tamper_bit {
                    let region = if bit / 8 < HEADER_LEN { "header" } else { "payload" };
                    *adv
                        .tamper_rejects_by_region
                        .entry(region.to_string())
                        .or_default()
                        .entry(r.as_str().to_string())
                        .or_default() += 1;
                }
            }
        }
        if d.origin == Origin::ForeignBody {
            // A bad tag means the decommitment itself went through.
            match reason {
                None | Some(Reject::BadMac) => {
                    adv.decommit_attempts += 1;
                    adv.decommit_successes += 1;
                }
                Some(Reject::DecommitFailed) => adv.decommit_attempts += 1,
                _ => {}
            }
        }
    }

    fn dispatch(&mut self, to: NodeId, msg: &ProtocolMessage, origin: Origin) -> Result<(), Reject> {
        if to == SERVER_ID {
            return self.server.receive(msg).map(|_| ());
        }
        let i = self.index(to);
        match msg.kind {
            MessageKind::KeyDistribute => {
                self.members[i].state.process_key_distribute(msg)?;
                if !origin.is_adversarial() {
                    let ts = self.timestamp(to);
                    match self.members[i].state.build_rsi_reply(ts) {
                        Ok(reply) => self.send(to, msg.sender, &reply),
                        Err(e) => log::warn!("{to}: cannot reply: {e}"),
                    }
                }
                Ok(())
            }
            MessageKind::RsiReply => {
                self.members[i].state.process_rsi_reply(msg)?;
                self.check_rekey_complete(to);
                Ok(())
            }
            MessageKind::HandoverForward => {
                self.members[i].state.process_handover_forward(msg)?;
                self.metrics.elections.handover_forwards_recovered += 1;
                Ok(())
            }
            MessageKind::ElectionCall => {
                self.members[i].state.process_election_call(msg)?;
                let view = self.members[i].view.clone();
                let ts = self.timestamp(to);
                match self.members[i].state.build_vote(&view, ts) {
                    Ok(vote) => self.send(to, msg.sender, &vote),
                    Err(e) => log::info!("{to}: no vote cast: {e}"),
                }
                Ok(())
            }
            MessageKind::Vote => {
                self.members[i].state.process_vote(msg)?;
                let st = &self.members[i].state;
                let votes = st.election().map_or(0, |r| r.votes.len());
                if votes >= st.keys.k_msi_map.len() {
                    self.tally(to);
                }
                Ok(())
            }
            MessageKind::Assign => {
                let assignee = self.members[i].state.process_assign(msg)?;
                if assignee == to {
                    self.commit_handover(msg.sender, to);
                }
                Ok(())
            }
            MessageKind::Data => self.members[i].state.receive_data(msg).map(|_| ()),
        }
    }

    /// The assignee has taken the role: the outgoing leader steps down in
    /// the same event, and the new leader re-keys on the next tick.
    fn commit_handover(&mut self, old: NodeId, new: NodeId) {
        if self.is_member(old) {
            let i = self.index(old);
            self.members[i].state.step_down(new);
        }
        self.leader = new;
        self.rekey_in_progress = true;
        let e = &mut self.metrics.elections;
        e.assignments += 1;
        e.handovers.push([self.tick, u64::from(old.0), u64::from(new.0)]);
        self.record(TraceKind::Election, Some(old), Some(new), None, None, None, None);
        log::info!("tick {}: leadership {old} -> {new}", self.tick);
        self.schedule(self.tick + 1, Event::Rekey { leader: new });
    }

    fn start_rekey(&mut self, leader: NodeId) {
        let i = self.index(leader);
        if !self.members[i].state.is_leader() {
            return;
        }
        let ts = self.timestamp(leader);
        match self.members[i].state.build_key_distribute(ts) {
            Ok(kd) => {
                self.rekey_in_progress = true;
                for to in self.others(leader) {
                    self.send(leader, to, &kd);
                }
                let key_epoch = self.members[i].state.keys.key_epoch;
                self.schedule(
                    self.tick + self.cfg.retransmit_ticks,
                    Event::Retransmit { leader, key_epoch },
                );
            }
            Err(e) => log::warn!("{leader}: cannot distribute key: {e}"),
        }
    }

    fn retransmit(&mut self, leader: NodeId, key_epoch: u64) {
        let i = self.index(leader);
        let st = &self.members[i].state;
        if !st.is_leader() || st.keys.key_epoch != key_epoch {
            return;
        }
        let missing: Vec<NodeId> = self
            .others(leader)
            .into_iter()
            .filter(|s| !st.keys.k_msi_map.contains_key(s))
            .collect();
        if missing.is_empty() {
            return;
        }
        let ts = self.timestamp(leader);
        match self.members[i].state.redistribute_key(ts) {
            Ok(kd) => {
                for to in missing {
                    self.send(leader, to, &kd);
                }
            }
            Err(e) => log::warn!("{leader}: cannot re-send key: {e}"),
        }
        self.schedule(
            self.tick + self.cfg.retransmit_ticks,
            Event::Retransmit { leader, key_epoch },
        );
    }

    fn check_rekey_complete(&mut self, leader: NodeId) {
        let st = &self.members[self.index(leader)].state;
        let tag = (leader, st.keys.key_epoch);
        if st.is_leader()
            && st.keys.k_msi_map.len() + 1 == usize::from(self.cfg.node_count)
            && self.announced != Some(tag)
        {
            self.announced = Some(tag);
            self.rekey_in_progress = false;
            self.metrics.establishment.rekeys_completed += 1;
            self.record(TraceKind::Rekey, Some(leader), None, None, None, None, None);
        }
    }

    fn handle_crossings(&mut self) {
        for id in std::mem::take(&mut self.crossings) {
            if id == self.leader && self.members[self.index(id)].state.is_leader() {
                self.start_election(id);
            }
        }
    }

    fn start_election(&mut self, leader: NodeId) {
        let i = self.index(leader);
        if self.members[i].state.election().is_some() {
            return;
        }
        self.round_counter += 1;
        let round = self.round_counter;
        let ts = self.timestamp(leader);
        match self.members[i].state.build_election_call(round, ts) {
            Ok(call) => {
                self.metrics.elections.calls += 1;
                log::info!("tick {}: {leader} below threshold, calling election {round}", self.tick);
                for to in self.others(leader) {
                    self.send(leader, to, &call);
                }
                self.schedule(
                    self.tick + self.cfg.vote_timeout_ticks,
                    Event::VoteTimeout { leader, round },
                );
            }
            Err(e) => log::warn!("{leader}: cannot call election: {e}"),
        }
    }

    fn tally(&mut self, leader: NodeId) {
        let i = self.index(leader);
        let view = self.members[i].view.clone();
        let ts = self.timestamp(leader);
        let round = self.members[i].state.election().map_or(0, |r| r.round_id);
        match self.members[i].state.tally_and_assign(&view, ts) {
            Ok(Some(assign)) => {
                let winner = NodeId(u16::from_be_bytes([assign.body[0], assign.body[1]]));
                for to in self.others(leader) {
                    self.send(leader, to, &assign);
                }
                for slave in self.members[i].state.stored_reply_ids() {
                    if slave == winner {
                        continue;
                    }
                    let ts = self.timestamp(leader);
                    match self.members[i].state.build_handover_forward(slave, ts) {
                        Ok(fwd) => {
                            self.metrics.elections.handover_forwards_sent += 1;
                            self.send(leader, winner, &fwd);
                        }
                        Err(e) => log::warn!("{leader}: cannot forward {slave}: {e}"),
                    }
                }
                self.schedule(
                    self.tick + self.cfg.vote_timeout_ticks,
                    Event::AssignCheck { leader, round },
                );
            }
            Ok(None) => self.metrics.elections.rounds_without_votes += 1,
            Err(e) => log::warn!("{leader}: cannot tally: {e}"),
        }
    }

    fn epoch_boundary(&mut self, tick: u64) {
        let epoch = tick / self.cfg.epoch_period_ticks;
        for i in 0..self.members.len() {
            let id = self.members[i].state.id;
            let w = self.model.fuse(id, epoch).bits;
            self.members[i].state.install_witness(epoch, w);
        }
        self.adversary.on_epoch(epoch);
        if tick == 0 {
            return;
        }
        self.metrics.epochs_completed += 1;
        // Slaves re-commit their nonce under the new witness so a stored
        // commitment is always from the current epoch.
        for id in self.cfg.node_ids() {
            let i = self.index(id);
            let st = &self.members[i].state;
            if st.is_leader() || st.keys.r_si.is_none() {
                continue;
            }
            let to = st.leader;
            let ts = self.timestamp(id);
            if let Ok(reply) = self.members[i].state.build_rsi_reply(ts) {
                self.send(id, to, &reply);
            }
        }
    }

    /// Slave ring in id order, excluding the current leader.
    fn ring(&self) -> Vec<NodeId> {
        self.slaves()
    }

    fn ring_neighbors(ring: &[NodeId], id: NodeId) -> Vec<NodeId> {
        let Some(pos) = ring.iter().position(|n| *n == id) else {
            return Vec::new();
        };
        let n = ring.len();
        let mut out: Vec<NodeId> = [ring[(pos + n - 1) % n], ring[(pos + 1) % n]]
            .into_iter()
            .filter(|x| *x != id)
            .collect();
        out.dedup();
        out
    }

    /// Out-of-band energy beacons: refreshes every node's neighbor view.
    fn beacon(&mut self) {
        let ring = self.ring();
        let levels: BTreeMap<NodeId, f64> = self
            .members
            .iter()
            .map(|m| (m.state.id, m.energy.level))
            .collect();
        for i in 0..self.members.len() {
            let id = self.members[i].state.id;
            let neighbors = if id == self.leader || self.cfg.topology.mesh == Mesh::Full {
                self.others(id)
            } else {
                Self::ring_neighbors(&ring, id)
            };
            self.members[i].view = neighbors.into_iter().map(|n| (n, levels[&n])).collect();
        }
    }

    fn data_round(&mut self) {
        let ring = self.ring();
        for id in self.cfg.node_ids() {
            let i = self.index(id);
            let payload = format!("{}:{}", id.0, self.tick).into_bytes();
            if self.members[i].state.is_leader() {
                let ts = self.timestamp(id);
                if let Ok(m) = self.members[i].state.seal(Link::Server, SERVER_ID, &payload, ts) {
                    self.send(id, SERVER_ID, &m);
                }
                continue;
            }
            let leader = self.members[i].state.leader;
            let ts = self.timestamp(id);
            if let Ok(m) = self.members[i].state.seal(Link::Pairwise, leader, &payload, ts) {
                self.send(id, leader, &m);
            }
            let Some(pos) = ring.iter().position(|n| *n == id) else {
                continue;
            };
            let next = ring[(pos + 1) % ring.len()];
            if next == id {
                continue;
            }
            let ts = self.timestamp(id);
            if let Ok(m) = self.members[i].state.seal(Link::Group, next, &payload, ts) {
                self.send(id, next, &m);
            }
        }
    }

    fn check_invariants(&mut self) {
        let leaders = self.members.iter().filter(|m| m.state.is_leader()).count();
        if leaders != 1 {
            self.metrics.invariants.single_leader_violations += 1;
            log::error!("tick {}: {leaders} nodes in leader role", self.tick);
        }
        let bad = self
            .members
            .iter()
            .filter(|m| !m.state.keys.hierarchy_consistent())
            .count();
        self.metrics.invariants.hierarchy_violations += bad as u64;
    }

    fn collect_keys(&mut self) {
        for m in &self.members {
            let k = &m.state.keys;
            let singles = [k.k_mn, k.k_msi, k.ks, k.r_si];
            for key in singles.into_iter().flatten() {
                self.keys_seen.insert(key.0);
            }
            for key in k.k_msi_map.values().chain(k.peer_nonces.values()) {
                self.keys_seen.insert(key.0);
            }
        }
    }

    /// Closes the run and computes the summary metrics.
    pub fn finish(mut self) -> SimOutcome {
        let m = &mut self.metrics;
        m.ticks = self.tick;
        let est = &mut m.establishment;
        est.success_rate = if est.key_distribute_deliveries == 0 {
            0.0
        } else {
            est.key_distribute_accepts as f64 / est.key_distribute_deliveries as f64
        };

        let costs = self.cfg.energy.costs;
        let mut worst: f64 = 0.0;
        m.energy.nodes = self
            .members
            .iter()
            .map(|mem| {
                let ledger_cost: f64 = mem
                    .actions
                    .iter()
                    .map(|(a, n)| costs.cost(*a) * *n as f64)
                    .sum();
                if !mem.depleted {
                    worst = worst.max((mem.spent - ledger_cost).abs());
                }
                NodeEnergy {
                    id: mem.state.id.0,
                    initial: mem.initial,
                    level: mem.energy.level,
                    spent: mem.spent,
                    actions: mem
                        .actions
                        .iter()
                        .map(|(a, n)| (a.as_str().to_string(), *n))
                        .collect(),
                    ledger_cost,
                    depleted: mem.depleted,
                }
            })
            .collect();
        m.energy.conservation_error = worst;

        m.elections.final_leader = self.leader.0;
        let leader = &self.members[usize::from(self.leader.0) - 1].state;
        let slaves: Vec<&NodeState> = self
            .members
            .iter()
            .map(|mem| &mem.state)
            .filter(|s| s.id != self.leader)
            .collect();
        let inv = &mut m.invariants;
        inv.all_slaves_keyed = slaves
            .iter()
            .all(|s| leader.keys.k_msi_map.contains_key(&s.id));
        inv.key_agreement = leader.keys.ks.is_some()
            && slaves.iter().all(|s| match leader.keys.k_msi_map.get(&s.id) {
                Some(k) => s.keys.ks == leader.keys.ks && s.keys.k_msi == Some(*k),
                None => true,
            });
        inv.key_epoch_uniform = self
            .members
            .iter()
            .all(|mem| mem.state.keys.key_epoch == leader.keys.key_epoch);

        let adv = &mut m.adversary;
        adv.decommit_attempts += self.adversary.overheard.attempts;
        adv.decommit_successes += self.adversary.overheard.successes;
        if self.adversary.mode == AdversaryMode::Eavesdrop {
            adv.transcript_messages = self.transcript.len() as u64;
            adv.transcript_bytes = self.transcript.iter().map(|b| b.len() as u64).sum();
            let mut leaked = BTreeSet::new();
            for bytes in &self.transcript {
                for w in bytes.windows(16) {
                    let w: [u8; 16] = w.try_into().expect("16-byte window");
                    if self.keys_seen.contains(&w) {
                        leaked.insert(w);
                    }
                }
            }
            adv.transcript_key_leaks = leaked.len() as u64;
        }

        SimOutcome {
            trace: self.trace,
            metrics: self.metrics,
            nodes: self.members.into_iter().map(|mem| mem.state).collect(),
        }
    }
}
