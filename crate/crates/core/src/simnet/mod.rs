//! Deterministic discrete-event simulation of one body network: star links
//! to the leader, a slave mesh, a personal-server sink, energy accounting,
//! elections, and an optional adversary on the channel.

pub mod analytic;
mod adversary;
pub mod attack;
mod config;
mod engine;
mod metrics;
mod trace;
mod trials;

pub use config::{
    AdversaryMode, AdversarySpec, CodeConfig, ConfigError, EnergyConfig, Mesh, SimConfig,
    TopologyConfig, FOREIGN_ID_BASE, MAX_NODES, REQUIRED_FIELDS, SERVER_ID,
};
pub use engine::{run, SimOutcome, Simulator, METRICS_FILE, TRACE_FILE};
pub use metrics::{
    AdversaryMetrics, ElectionMetrics, EnergyMetrics, EnergySample, EstablishmentMetrics,
    InvariantMetrics, MessageMetrics, Metrics, NodeEnergy,
};
pub use trace::{digest_hex, Origin, Trace, TraceEvent, TraceKind};
pub use trials::{establishment_trials, TrialStats};
