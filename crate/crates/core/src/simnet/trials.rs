use serde::{Deserialize, Serialize};

use super::analytic;
use super::config::{ConfigError, SimConfig};
use crate::biokeys::hamming;
use crate::protocol::{Key128, NodeId, NodeState, ProtocolMessage, Timestamp};
use crate::rng;
use rand::RngCore;

/// Outcome of repeated single-round establishments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trials: u64,
    /// KeyDistribute deliveries to slaves and how many were accepted.
    pub slave_attempts: u64,
    pub slave_accepts: u64,
    /// RsiReply deliveries to the leader and how many it accepted.
    pub reply_attempts: u64,
    pub reply_accepts: u64,
    /// Leader/slave witness pairs within distance `t`.
    pub similar_pairs: u64,
    pub success_rate: f64,
    pub reply_success_rate: f64,
    pub similarity_rate: f64,
    pub analytic_success_rate: f64,
    pub analytic_similarity_rate: f64,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Runs `trials` independent establishment rounds over serialized messages.
/// Trial `i` uses biometric epoch `i`, so witnesses are independent across
/// trials; node 1 leads and every other node is a slave.
pub fn establishment_trials(cfg: &SimConfig, trials: u64) -> Result<TrialStats, ConfigError> {
    cfg.validate()?;
    let model = cfg.body_model();
    let code = cfg.code_params();
    let leader_id = NodeId(1);
    let mut s = TrialStats {
        trials,
        slave_attempts: 0,
        slave_accepts: 0,
        reply_attempts: 0,
        reply_accepts: 0,
        similar_pairs: 0,
        success_rate: 0.0,
        reply_success_rate: 0.0,
        similarity_rate: 0.0,
        analytic_success_rate: analytic::key_acceptance(cfg.p, cfg.r, &code),
        analytic_similarity_rate: analytic::similarity(cfg.p, cfg.r, code.m, cfg.t),
    };
    for trial in 0..trials {
        let mut r = rng::stream("bsk.trial", &[cfg.seed, trial]);
        let kn = Key128::random(&mut r);
        let r_u = Key128::random(&mut r);
        let mut nodes: Vec<NodeState> = cfg
            .node_ids()
            .map(|id| {
                let mut n = NodeState::new(id, leader_id, kn, r_u, code, 1, r.next_u64());
                n.install_witness(trial, model.fuse(id, trial).bits);
                n
            })
            .collect();
        let (leader, slaves) = nodes.split_first_mut().expect("node_count >= 2");
        let ts = Timestamp::new(trial, 0);
        let kd = leader
            .build_key_distribute(ts)
            .expect("leader holds the trial witness")
            .to_bytes();
        let leader_witness = leader.witness_for(ts).expect("installed").clone();
        for (k, slave) in slaves.iter_mut().enumerate() {
            let w = slave.witness_for(ts).expect("installed");
            if hamming(&leader_witness, w).expect("equal lengths") <= cfg.t {
                s.similar_pairs += 1;
            }
            s.slave_attempts += 1;
            let msg = ProtocolMessage::from_bytes(&kd).expect("honest frame parses");
            if slave.process_key_distribute(&msg).is_err() {
                continue;
            }
            s.slave_accepts += 1;
            let reply = slave
                .build_rsi_reply(Timestamp::new(trial, 1 + k as u16))
                .expect("slave is keyed")
                .to_bytes();
            s.reply_attempts += 1;
            let msg = ProtocolMessage::from_bytes(&reply).expect("honest frame parses");
            if leader.process_rsi_reply(&msg).is_ok() {
                s.reply_accepts += 1;
            }
        }
    }
    s.success_rate = ratio(s.slave_accepts, s.slave_attempts);
    s.reply_success_rate = ratio(s.reply_accepts, s.reply_attempts);
    s.similarity_rate = ratio(s.similar_pairs, s.slave_attempts);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_trials_always_succeed() {
        let cfg = SimConfig {
            p: 0.0,
            ..SimConfig::default()
        };
        let s = establishment_trials(&cfg, 50).unwrap();
        assert_eq!(s.slave_attempts, 50 * 7);
        assert_eq!(s.success_rate, 1.0);
        assert_eq!(s.reply_success_rate, 1.0);
        assert_eq!(s.similarity_rate, 1.0);
    }

    #[test]
    fn heavy_noise_fails_often() {
        let cfg = SimConfig {
            p: 0.2,
            ..SimConfig::default()
        };
        let s = establishment_trials(&cfg, 20).unwrap();
        assert!(s.success_rate < 0.5);
        assert!(s.analytic_success_rate < 0.5);
    }

    #[test]
    fn degenerate_single_trial() {
        let s = establishment_trials(&SimConfig::default(), 1).unwrap();
        assert_eq!(s.trials, 1);
        assert!(s.success_rate.is_finite());
        let s = establishment_trials(&SimConfig::default(), 0).unwrap();
        assert_eq!(s.success_rate, 0.0);
    }
}
