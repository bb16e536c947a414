use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::config::{AdversaryMode, SimConfig, FOREIGN_ID_BASE, SERVER_ID};
use super::trace::Origin;
use crate::biokeys::BodySignalModel;
use crate::bits::BitString;
use crate::fuzzycommit::{self, CodeParams};
use crate::protocol::{Key128, MessageKind, NodeId, NodeState, ProtocolMessage, Timestamp, KEY_BITS};
use crate::rng;

/// A message the adversary puts on the air.
#[derive(Debug, Clone)]
pub(crate) struct Injection {
    pub to: NodeId,
    pub bytes: Vec<u8>,
    pub origin: Origin,
    pub tamper_bit: Option<usize>,
}

/// Counts of the adversary's own decommitment attempts on overheard
/// commitments (foreign-body mode).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Overheard {
    pub attempts: u64,
    pub successes: u64,
}

/// A second body: its own signal model, `r_u` and network key, driving a
/// complete leader stack.
#[derive(Debug)]
struct ForeignBody {
    model: BodySignalModel,
    leader: NodeState,
}

#[derive(Debug)]
pub(crate) struct Adversary {
    pub mode: AdversaryMode,
    rate: f64,
    rng: ChaCha8Rng,
    code: CodeParams,
    node_count: u16,
    foreign: Option<ForeignBody>,
    pub overheard: Overheard,
}

fn carries_commitment(kind: MessageKind) -> bool {
    matches!(
        kind,
        MessageKind::KeyDistribute | MessageKind::RsiReply | MessageKind::HandoverForward
    )
}

fn random_bits<R: RngCore>(rng: &mut R, len: usize) -> BitString {
    let mut bytes = vec![0u8; len.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    BitString::from_bytes(&bytes, len).expect("buffer sized from len")
}

impl Adversary {
    pub fn new(cfg: &SimConfig) -> Self {
        let spec = &cfg.adversary;
        let foreign = (spec.mode == AdversaryMode::ForeignBody).then(|| {
            let mut r = rng::stream("bsk.foreign", &[spec.foreign_seed]);
            let id = NodeId(FOREIGN_ID_BASE | 1);
            let model = BodySignalModel {
                seed: spec.foreign_seed,
                ..cfg.body_model()
            };
            let leader = NodeState::new(
                id,
                id,
                Key128::random(&mut r),
                Key128::random(&mut r),
                cfg.code_params(),
                cfg.epoch_period_ticks,
                r.next_u64(),
            );
            ForeignBody { model, leader }
        });
        Self {
            mode: spec.mode,
            rate: spec.rate,
            rng: rng::stream("bsk.adversary", &[cfg.seed]),
            code: cfg.code_params(),
            node_count: cfg.node_count,
            foreign,
            overheard: Overheard::default(),
        }
    }

    pub fn on_epoch(&mut self, epoch: u64) {
        if let Some(f) = self.foreign.as_mut() {
            let w = f.model.fuse(f.leader.id, epoch).bits;
            f.leader.install_witness(epoch, w);
        }
    }

    fn fires(&mut self) -> bool {
        self.rate > 0.0 && self.rng.random_bool(self.rate)
    }

    /// Called for every honest transmission before it enters the channel.
    /// Returned injections are delivered ahead of the original.
    pub fn on_send(
        &mut self,
        tick: u64,
        msg: &ProtocolMessage,
        bytes: &[u8],
        to: NodeId,
        slaves: &[NodeId],
    ) -> Vec<Injection> {
        match self.mode {
            AdversaryMode::None | AdversaryMode::Eavesdrop | AdversaryMode::Replay => Vec::new(),
            AdversaryMode::Tamper => {
                if !self.fires() {
                    return Vec::new();
                }
                let bit = self.rng.random_range(0..bytes.len() * 8);
                let mut tampered = bytes.to_vec();
                tampered[bit / 8] ^= 0x80 >> (bit % 8);
                vec![Injection {
                    to,
                    bytes: tampered,
                    origin: Origin::Tamper,
                    tamper_bit: Some(bit),
                }]
            }
            AdversaryMode::Inject => {
                if !self.fires() {
                    return Vec::new();
                }
                vec![self.fabricate(tick)]
            }
            AdversaryMode::ForeignBody => {
                let f = self.foreign.as_mut().expect("foreign stack exists in foreign_body mode");
                if carries_commitment(msg.kind) {
                    self.overheard.attempts += 1;
                    if f.leader.try_open_commitment(&msg.body, msg.ts).is_ok() {
                        self.overheard.successes += 1;
                    }
                }
                if slaves.is_empty() || !self.fires() {
                    return Vec::new();
                }
                let f = self.foreign.as_mut().expect("checked above");
                let ts = f.leader.next_timestamp(tick);
                let Ok(kd) = f.leader.build_key_distribute(ts) else {
                    return Vec::new();
                };
                let to = slaves[self.rng.random_range(0..slaves.len())];
                vec![Injection {
                    to,
                    bytes: kd.to_bytes(),
                    origin: Origin::ForeignBody,
                    tamper_bit: None,
                }]
            }
        }
    }

    /// Called after an honest delivery was accepted; may schedule a replay
    /// `delay` ticks later.
    pub fn on_accept(&mut self, to: NodeId, bytes: &[u8]) -> Option<(u64, Injection)> {
        if self.mode != AdversaryMode::Replay || !self.fires() {
            return None;
        }
        let delay = self.rng.random_range(1..=10);
        Some((
            delay,
            Injection {
                to,
                bytes: bytes.to_vec(),
                origin: Origin::Replay,
                tamper_bit: None,
            },
        ))
    }

    /// A well-formed message of a random kind, claiming a random honest
    /// sender and tagged under a random key.
    fn fabricate(&mut self, tick: u64) -> Injection {
        let n = self.node_count;
        let to = match self.rng.random_range(0..=n) {
            0 => SERVER_ID,
            i => NodeId(i),
        };
        let sender = loop {
            let s = NodeId(self.rng.random_range(1..=n));
            if s != to {
                break s;
            }
        };
        let kind = MessageKind::from_u8(self.rng.random_range(1..=7)).expect("kind codes 1..=7");
        let mut extra = NodeId::NONE;
        let body = match kind {
            MessageKind::KeyDistribute | MessageKind::RsiReply | MessageKind::HandoverForward => {
                if kind == MessageKind::HandoverForward {
                    extra = NodeId(self.rng.random_range(1..=n));
                }
                let payload = random_bits(&mut self.rng, KEY_BITS);
                let witness = random_bits(&mut self.rng, self.code.m);
                fuzzycommit::commit(&self.code, &payload, &witness)
                    .expect("lengths follow the code")
                    .to_bytes()
            }
            MessageKind::ElectionCall => self.rng.random::<u32>().to_be_bytes().to_vec(),
            MessageKind::Vote | MessageKind::Assign => {
                self.rng.random_range(1..=n).to_be_bytes().to_vec()
            }
            MessageKind::Data => {
                let mut b = vec![0u8; 16];
                self.rng.fill_bytes(&mut b);
                b
            }
        };
        let ts = Timestamp::new(tick, self.rng.random());
        let key = Key128::random(&mut self.rng);
        let msg = ProtocolMessage::authenticated(kind, sender, extra, ts, body, &key);
        Injection {
            to,
            bytes: msg.to_bytes(),
            origin: Origin::Inject,
            tamper_bit: None,
        }
    }
}
