use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{AdversaryMode, ConfigError, SimConfig};
use super::engine;
use super::metrics::reject_table;

/// Stop after this many runs even if the event target was not reached.
pub const MAX_RUNS: u64 = 10_000;

/// Aggregated adversary outcome over consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub mode: AdversaryMode,
    pub rate: f64,
    pub target_events: u64,
    pub runs: u64,
    pub first_seed: u64,
    /// The counted quantity: transcript messages for eavesdrop, decommit
    /// attempts for foreign_body, adversarial deliveries otherwise.
    pub events: u64,
    pub attempts: u64,
    pub rejects: BTreeMap<String, u64>,
    pub tamper_rejects_by_region: BTreeMap<String, BTreeMap<String, u64>>,
    pub silent_acceptances: u64,
    pub decommit_attempts: u64,
    pub decommit_successes: u64,
    pub transcript_messages: u64,
    pub transcript_key_leaks: u64,
    pub honest_rejects: BTreeMap<String, u64>,
}

impl AttackReport {
    /// No forgery, tamper, replay or foreign key was ever accepted and no
    /// key leaked.
    pub fn secure(&self) -> bool {
        self.silent_acceptances == 0 && self.decommit_successes == 0 && self.transcript_key_leaks == 0
    }
}

/// Runs `base` with the adversary set to `mode` on seeds `base.seed`,
/// `base.seed + 1`, ... until `target_events` events were observed. The
/// configured rate is used when positive, otherwise 1.0.
pub fn campaign(
    base: &SimConfig,
    mode: AdversaryMode,
    target_events: u64,
) -> Result<AttackReport, ConfigError> {
    let rate = if base.adversary.rate > 0.0 {
        base.adversary.rate
    } else {
        1.0
    };
    let mut report = AttackReport {
        mode,
        rate,
        target_events,
        runs: 0,
        first_seed: base.seed,
        events: 0,
        attempts: 0,
        rejects: reject_table(),
        tamper_rejects_by_region: BTreeMap::new(),
        silent_acceptances: 0,
        decommit_attempts: 0,
        decommit_successes: 0,
        transcript_messages: 0,
        transcript_key_leaks: 0,
        honest_rejects: reject_table(),
    };
    while report.events < target_events.max(1) && report.runs < MAX_RUNS {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(report.runs);
        cfg.adversary.mode = mode;
        cfg.adversary.rate = rate;
        let out = engine::run(&cfg)?;
        report.runs += 1;
        let a = &out.metrics.adversary;
        let events = match mode {
            AdversaryMode::Eavesdrop => a.transcript_messages,
            AdversaryMode::ForeignBody => a.decommit_attempts,
            _ => a.attempts,
        };
        report.events += events;
        report.attempts += a.attempts;
        for (k, v) in &a.rejects {
            *report.rejects.entry(k.clone()).or_default() += v;
        }
        for (region, table) in &a.tamper_rejects_by_region {
            let dst = report.tamper_rejects_by_region.entry(region.clone()).or_default();
            for (k, v) in table {
                *dst.entry(k.clone()).or_default() += v;
            }
        }
        for (k, v) in &out.metrics.rejects {
            *report.honest_rejects.entry(k.clone()).or_default() += v;
        }
        report.silent_acceptances += a.silent_acceptances;
        report.decommit_attempts += a.decommit_attempts;
        report.decommit_successes += a.decommit_successes;
        report.transcript_messages += a.transcript_messages;
        report.transcript_key_leaks += a.transcript_key_leaks;
        if events == 0 {
            log::warn!("{mode} run produced no events; stopping");
            break;
        }
    }
    Ok(report)
}
