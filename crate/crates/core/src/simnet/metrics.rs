use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::protocol::Reject;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstablishmentMetrics {
    /// Honest KeyDistribute deliveries to slaves, and how many were accepted.
    pub key_distribute_deliveries: u64,
    pub key_distribute_accepts: u64,
    pub success_rate: f64,
    pub rsi_reply_deliveries: u64,
    pub rsi_reply_accepts: u64,
    pub rekeys_completed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageMetrics {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub bytes_sent: u64,
    pub sent_by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergy {
    pub id: u16,
    pub initial: f64,
    pub level: f64,
    pub spent: f64,
    /// Logged action counts, keyed by action name.
    pub actions: BTreeMap<String, u64>,
    /// Sum of configured costs over the logged actions.
    pub ledger_cost: f64,
    /// True once a debit was clamped at zero; such nodes are excluded from
    /// the conservation check.
    pub depleted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub tick: u64,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetrics {
    pub nodes: Vec<NodeEnergy>,
    pub timeline: Vec<EnergySample>,
    /// Largest `|spent - ledger_cost|` over non-depleted nodes.
    pub conservation_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElectionMetrics {
    pub calls: u64,
    pub assignments: u64,
    pub rounds_without_votes: u64,
    pub handover_forwards_sent: u64,
    pub handover_forwards_recovered: u64,
    /// `[tick, old_leader, new_leader]` per completed handover.
    pub handovers: Vec<[u64; 3]>,
    pub final_leader: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantMetrics {
    pub single_leader_violations: u64,
    pub delivery_violations: u64,
    pub hierarchy_violations: u64,
    /// Every slave registered at the final leader holds its `ks` and `k_msi`.
    pub key_agreement: bool,
    /// Every slave is registered at the final leader.
    pub all_slaves_keyed: bool,
    pub key_epoch_uniform: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversaryMetrics {
    pub mode: String,
    /// Adversarial deliveries to honest nodes or the server.
    pub attempts: u64,
    pub rejects: BTreeMap<String, u64>,
    /// Tamper rejects split by where the flipped bit sat: `header` or `payload`.
    pub tamper_rejects_by_region: BTreeMap<String, BTreeMap<String, u64>>,
    pub silent_acceptances: u64,
    pub decommit_attempts: u64,
    pub decommit_successes: u64,
    pub transcript_messages: u64,
    pub transcript_bytes: u64,
    /// Key values found verbatim in the eavesdropped transcript.
    pub transcript_key_leaks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: u64,
    pub epochs_completed: u64,
    pub establishment: EstablishmentMetrics,
    /// Rejections of honest traffic, by reason.
    pub rejects: BTreeMap<String, u64>,
    pub messages: MessageMetrics,
    pub elections: ElectionMetrics,
    pub energy: EnergyMetrics,
    pub invariants: InvariantMetrics,
    pub adversary: AdversaryMetrics,
}

pub(crate) fn reject_table() -> BTreeMap<String, u64> {
    Reject::ALL.iter().map(|r| (r.as_str().to_string(), 0)).collect()
}

impl Metrics {
    pub fn total_rejects(&self) -> u64 {
        self.rejects.values().sum()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
