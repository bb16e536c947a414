use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::biokeys::BodySignalModel;
use crate::election::CostTable;
use crate::fuzzycommit::{CodeFamily, CodeParams};
use crate::protocol::{NodeId, KEY_BITS};

/// Identity of the personal server sink.
pub const SERVER_ID: NodeId = NodeId(0xFFFF);
/// Foreign-body nodes use ids with the high bit set, outside any config.
pub const FOREIGN_ID_BASE: u16 = 0x8000;
pub const MAX_NODES: u16 = 0x7FFF;

/// A config problem, naming the offending field by its dotted path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeConfig {
    pub name: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
}

impl CodeConfig {
    pub fn repetition(k: usize, d: usize) -> Self {
        Self {
            name: "repetition".into(),
            m: k * d,
            k,
            d,
        }
    }

    pub fn params(&self) -> CodeParams {
        CodeParams {
            family: CodeFamily::Repetition,
            m: self.m,
            k: self.k,
            d: self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub initial_default: f64,
    /// Per-node starting levels, keyed by node id.
    pub initial_overrides: BTreeMap<u16, f64>,
    pub threshold: f64,
    pub costs: CostTable,
}

impl EnergyConfig {
    pub fn initial(&self, id: NodeId) -> f64 {
        self.initial_overrides
            .get(&id.0)
            .copied()
            .unwrap_or(self.initial_default)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mesh {
    /// Each slave is adjacent to its predecessor and successor by id.
    Ring,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub mesh: Mesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    None,
    Eavesdrop,
    Replay,
    Tamper,
    Inject,
    ForeignBody,
}

impl AdversaryMode {
    pub const ALL: [AdversaryMode; 6] = [
        AdversaryMode::None,
        AdversaryMode::Eavesdrop,
        AdversaryMode::Replay,
        AdversaryMode::Tamper,
        AdversaryMode::Inject,
        AdversaryMode::ForeignBody,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdversaryMode::None => "none",
            AdversaryMode::Eavesdrop => "eavesdrop",
            AdversaryMode::Replay => "replay",
            AdversaryMode::Tamper => "tamper",
            AdversaryMode::Inject => "inject",
            AdversaryMode::ForeignBody => "foreign_body",
        }
    }
}

impl fmt::Display for AdversaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdversaryMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ConfigError::new("adversary.mode", format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub mode: AdversaryMode,
    pub rate: f64,
    pub foreign_seed: u64,
}

impl AdversarySpec {
    pub fn none() -> Self {
        Self {
            mode: AdversaryMode::None,
            rate: 0.0,
            foreign_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub node_count: u16,
    pub seed: u64,
    pub hash: String,
    pub code: CodeConfig,
    pub p: f64,
    #[serde(rename = "R")]
    pub r: usize,
    pub t: usize,
    pub epoch_period_ticks: u64,
    pub energy: EnergyConfig,
    pub vote_timeout_ticks: u64,
    pub beacon_interval_ticks: u64,
    pub data_interval_ticks: u64,
    pub retransmit_ticks: u64,
    pub topology: TopologyConfig,
    pub adversary: AdversarySpec,
    pub drop_rate: f64,
    pub max_ticks: u64,
}

/// Every field a config document must carry.
pub const REQUIRED_FIELDS: &[&str] = &[
    "node_count",
    "seed",
    "hash",
    "code",
    "code.name",
    "code.M",
    "code.K",
    "code.D",
    "p",
    "R",
    "t",
    "epoch_period_ticks",
    "energy",
    "energy.initial_default",
    "energy.initial_overrides",
    "energy.threshold",
    "energy.costs",
    "energy.costs.send",
    "energy.costs.receive",
    "energy.costs.commit_op",
    "energy.costs.decommit_op",
    "energy.costs.mac_op",
    "energy.costs.idle_tick",
    "vote_timeout_ticks",
    "beacon_interval_ticks",
    "data_interval_ticks",
    "retransmit_ticks",
    "topology",
    "topology.mesh",
    "adversary",
    "adversary.mode",
    "adversary.rate",
    "adversary.foreign_seed",
    "drop_rate",
    "max_ticks",
];

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            node_count: 8,
            seed: 1,
            hash: "sha256".into(),
            code: CodeConfig::repetition(KEY_BITS, 3),
            p: 0.01,
            r: 3,
            t: 24,
            epoch_period_ticks: 500,
            energy: EnergyConfig {
                initial_default: 100.0,
                initial_overrides: BTreeMap::new(),
                threshold: 20.0,
                costs: CostTable::default(),
            },
            vote_timeout_ticks: 50,
            beacon_interval_ticks: 10,
            data_interval_ticks: 20,
            retransmit_ticks: 25,
            topology: TopologyConfig { mesh: Mesh::Ring },
            adversary: AdversarySpec::none(),
            drop_rate: 0.0,
            max_ticks: 2000,
        }
    }
}

fn lookup<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, key| v.get(key))
}

impl SimConfig {
    /// Parses and validates a JSON config document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        for path in REQUIRED_FIELDS {
            if lookup(&value, path).is_none() {
                return Err(ConfigError::new(*path, "missing required field"));
            }
        }
        let cfg: SimConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |f: &str, m: String| Err(ConfigError::new(f, m));
        if self.node_count < 2 || self.node_count > MAX_NODES {
            return err("node_count", format!("must lie in 2..={MAX_NODES}, got {}", self.node_count));
        }
        if self.hash != "sha256" {
            return err("hash", format!("only \"sha256\" is supported, got {:?}", self.hash));
        }
        if self.code.name != "repetition" {
            return err("code.name", format!("only \"repetition\" is supported, got {:?}", self.code.name));
        }
        if self.code.k != KEY_BITS {
            return err("code.K", format!("must equal the key length {KEY_BITS}, got {}", self.code.k));
        }
        if self.code.d == 0 || self.code.d.is_multiple_of(2) {
            return err("code.D", format!("must be odd and positive, got {}", self.code.d));
        }
        if self.code.m != self.code.k * self.code.d {
            return err("code.M", format!("must equal K * D = {}, got {}", self.code.k * self.code.d, self.code.m));
        }
        if !(0.0..0.5).contains(&self.p) {
            return err("p", format!("must lie in [0, 0.5), got {}", self.p));
        }
        if self.r == 0 || self.r.is_multiple_of(2) {
            return err("R", format!("must be odd and positive, got {}", self.r));
        }
        if self.t > self.code.m {
            return err("t", format!("must not exceed code.M = {}, got {}", self.code.m, self.t));
        }
        for (name, v) in [
            ("epoch_period_ticks", self.epoch_period_ticks),
            ("vote_timeout_ticks", self.vote_timeout_ticks),
            ("beacon_interval_ticks", self.beacon_interval_ticks),
            ("data_interval_ticks", self.data_interval_ticks),
            ("retransmit_ticks", self.retransmit_ticks),
            ("max_ticks", self.max_ticks),
        ] {
            if v == 0 {
                return err(name, "must be positive".into());
            }
        }
        let e = &self.energy;
        if !(e.initial_default.is_finite() && e.initial_default >= 0.0) {
            return err("energy.initial_default", format!("must be finite and non-negative, got {}", e.initial_default));
        }
        for (id, level) in &e.initial_overrides {
            let field = format!("energy.initial_overrides.{id}");
            if *id == 0 || *id > self.node_count {
                return err(&field, format!("node id must lie in 1..={}", self.node_count));
            }
            if !(level.is_finite() && *level >= 0.0) {
                return err(&field, format!("must be finite and non-negative, got {level}"));
            }
        }
        if !(e.threshold.is_finite() && e.threshold >= 0.0) {
            return err("energy.threshold", format!("must be finite and non-negative, got {}", e.threshold));
        }
        let c = &e.costs;
        for (name, v) in [
            ("send", c.send),
            ("receive", c.receive),
            ("commit_op", c.commit_op),
            ("decommit_op", c.decommit_op),
            ("mac_op", c.mac_op),
            ("idle_tick", c.idle_tick),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(&format!("energy.costs.{name}"), format!("must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.adversary.rate) {
            return err("adversary.rate", format!("must lie in [0, 1], got {}", self.adversary.rate));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return err("drop_rate", format!("must lie in [0, 1), got {}", self.drop_rate));
        }
        Ok(())
    }

    pub fn code_params(&self) -> CodeParams {
        self.code.params()
    }

    pub fn body_model(&self) -> BodySignalModel {
        BodySignalModel {
            seed: self.seed,
            witness_len: self.code.m,
            bit_error_prob: self.p,
            readings_per_fuse: self.r,
        }
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.node_count).map(NodeId)
    }

    /// Highest starting energy, ties to the lowest id.
    pub fn initial_leader(&self) -> NodeId {
        self.node_ids()
            .fold(None, |best: Option<(NodeId, f64)>, id| {
                let e = self.energy.initial(id);
                match best {
                    Some((_, be)) if be >= e => best,
                    _ => Some((id, e)),
                }
            })
            .map(|(id, _)| id)
            .expect("node_count >= 2")
    }

    /// Warnings that do not invalidate the config.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let e = self.code_params().correction_capability();
        if self.t > 2 * e {
            out.push(format!(
                "t_exceeds_guaranteed_capability: t = {} > 2e = {}; witnesses judged similar may still fail to decommit",
                self.t,
                2 * e
            ));
        }
        out
    }
}
