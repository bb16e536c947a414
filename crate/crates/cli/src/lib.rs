//! Scenario runner behind the `bsk` binary: runs, parameter sweeps, attack
//! campaigns and an annotated establishment demo.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bsk_core::biokeys::fused_error_rate;
use bsk_core::protocol::MessageKind;
use bsk_core::simnet::{
    analytic, attack, establishment_trials, run, AdversaryMode, ConfigError, Metrics, SimConfig,
    Simulator, TraceEvent, TraceKind, TrialStats,
};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const ATTACK_FILE: &str = "attack.json";

pub const SWEEP_PARAMS: &[&str] = &["p", "R", "t", "N", "code.D"];

/// Energy bookkeeping must balance to this tolerance.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    /// 2 for every error; verdict failures are reported separately with 1.
    pub fn exit_code(&self) -> u8 {
        2
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<SimConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = SimConfig::from_json(&text)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(io_err(&path))
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn verdict(name: &str, pass: bool, detail: String) -> Verdict {
    Verdict {
        name: name.into(),
        pass,
        detail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions {
    pub fused_error_rate: f64,
    pub pairwise_mismatch: f64,
    pub key_acceptance: f64,
    pub similarity: f64,
}

impl Predictions {
    pub fn for_config(cfg: &SimConfig) -> Self {
        Self {
            fused_error_rate: fused_error_rate(cfg.p, cfg.r),
            pairwise_mismatch: analytic::pairwise_mismatch(cfg.p, cfg.r),
            key_acceptance: analytic::key_acceptance(cfg.p, cfg.r, &cfg.code_params()),
            similarity: analytic::similarity(cfg.p, cfg.r, cfg.code.m, cfg.t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub warnings: Vec<String>,
    pub analytic: Predictions,
    pub metrics: Metrics,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

/// Fixed checks over the metrics of one run.
pub fn verdicts(cfg: &SimConfig, m: &Metrics) -> Vec<Verdict> {
    let inv = &m.invariants;
    let adv = &m.adversary;
    let mut out = vec![
        verdict(
            "single_leader",
            inv.single_leader_violations == 0,
            format!("{} ticks with other than one leader", inv.single_leader_violations),
        ),
        verdict(
            "delivery_causality",
            inv.delivery_violations == 0,
            format!("{} sends delivered more than once", inv.delivery_violations),
        ),
        verdict(
            "key_hierarchy",
            inv.hierarchy_violations == 0,
            format!("{} node-ticks with keys not derived from k_mn", inv.hierarchy_violations),
        ),
        verdict(
            "key_agreement",
            inv.key_agreement && inv.all_slaves_keyed,
            format!(
                "agreement {}, all slaves keyed {}",
                inv.key_agreement, inv.all_slaves_keyed
            ),
        ),
        verdict(
            "energy_conservation",
            m.energy.conservation_error <= CONSERVATION_TOLERANCE,
            format!("max ledger error {:e}", m.energy.conservation_error),
        ),
        verdict(
            "no_silent_acceptance",
            adv.silent_acceptances == 0,
            format!("{} of {} adversarial deliveries accepted", adv.silent_acceptances, adv.attempts),
        ),
        verdict(
            "no_foreign_decommit",
            adv.decommit_successes == 0,
            format!("{} of {} foreign decommits succeeded", adv.decommit_successes, adv.decommit_attempts),
        ),
        verdict(
            "no_key_leak",
            adv.transcript_key_leaks == 0,
            format!("{} key-length windows of the transcript matched a live key", adv.transcript_key_leaks),
        ),
    ];
    if cfg.p == 0.0 {
        let rate = m.establishment.success_rate;
        out.push(verdict(
            "noiseless_establishment",
            rate == 1.0,
            format!("success rate {rate} with a noiseless channel"),
        ));
    }
    out
}

pub fn run_report(cfg: &SimConfig) -> Result<(RunReport, bsk_core::simnet::SimOutcome), CliError> {
    let outcome = run(cfg)?;
    let verdicts = verdicts(cfg, &outcome.metrics);
    let report = RunReport {
        config: cfg.clone(),
        warnings: cfg.warnings(),
        analytic: Predictions::for_config(cfg),
        metrics: outcome.metrics.clone(),
        pass: verdicts.iter().all(|v| v.pass),
        verdicts,
    };
    Ok((report, outcome))
}

/// Runs one scenario and writes trace, metrics and report into `out`.
pub fn cmd_run(cfg: &SimConfig, out: &Path) -> Result<RunReport, CliError> {
    let (report, outcome) = run_report(cfg)?;
    outcome.write_to(out).map_err(io_err(out))?;
    write_file(out, REPORT_FILE, &to_pretty(&report))?;
    Ok(report)
}

pub fn render_run(report: &RunReport) -> String {
    let m = &report.metrics;
    let mut s = String::new();
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    let _ = writeln!(
        s,
        "ticks {}  messages {}  rekeys {}  elections {}  success {:.5} (analytic {:.5})",
        m.ticks,
        m.messages.sent,
        m.establishment.rekeys_completed,
        m.elections.calls,
        m.establishment.success_rate,
        report.analytic.key_acceptance
    );
    for v in &report.verdicts {
        let _ = writeln!(s, "{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub trials: u64,
    pub success_rate: f64,
    pub analytic_success_rate: f64,
    pub gap: f64,
    pub similarity_rate: f64,
    pub analytic_similarity_rate: f64,
    pub stats: TrialStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub param: String,
    pub base: SimConfig,
    pub rows: Vec<SweepRow>,
}

pub fn parse_values(csv: &str) -> Result<Vec<f64>, CliError> {
    csv.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("--values: {v:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()
        .and_then(|vs| {
            if vs.is_empty() {
                Err(CliError::Usage("--values: no values given".into()))
            } else {
                Ok(vs)
            }
        })
}

fn json_number(value: f64, integer: bool) -> Value {
    if integer && value.fract() == 0.0 && value >= 0.0 {
        Value::from(value as u64)
    } else {
        Value::from(value)
    }
}

/// `base` with one sweep parameter replaced, revalidated so an out-of-range
/// value is reported against its config field.
pub fn with_param(base: &SimConfig, param: &str, value: f64) -> Result<SimConfig, CliError> {
    let mut doc = serde_json::to_value(base).expect("config serializes");
    match param {
        "p" => doc["p"] = json_number(value, false),
        "R" => doc["R"] = json_number(value, true),
        "t" => doc["t"] = json_number(value, true),
        "N" => doc["node_count"] = json_number(value, true),
        "code.D" => {
            doc["code"]["D"] = json_number(value, true);
            doc["code"]["M"] = json_number(value * base.code.k as f64, true);
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown sweep parameter {other:?}; expected one of {}",
                SWEEP_PARAMS.join(", ")
            )))
        }
    }
    Ok(SimConfig::from_value(doc)?)
}

pub fn cmd_sweep(
    base: &SimConfig,
    param: &str,
    values: &[f64],
    trials: u64,
    out: Option<&Path>,
) -> Result<SweepTable, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let configs = values
        .iter()
        .map(|&v| with_param(base, param, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(configs.len());
    for (value, cfg) in configs {
        log::info!("sweep {param} = {value}: {trials} trials");
        let stats = establishment_trials(&cfg, trials)?;
        rows.push(SweepRow {
            value,
            trials,
            success_rate: stats.success_rate,
            analytic_success_rate: stats.analytic_success_rate,
            gap: (stats.success_rate - stats.analytic_success_rate).abs(),
            similarity_rate: stats.similarity_rate,
            analytic_similarity_rate: stats.analytic_similarity_rate,
            stats,
        });
    }
    let table = SweepTable {
        param: param.into(),
        base: base.clone(),
        rows,
    };
    if let Some(dir) = out {
        write_file(dir, SWEEP_FILE, &to_pretty(&table))?;
    }
    Ok(table)
}

pub fn render_sweep(table: &SweepTable) -> String {
    let mut s = format!(
        "{:>10} {:>8} {:>10} {:>10} {:>9} {:>10}\n",
        table.param, "trials", "success", "analytic", "gap", "similar"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:>10} {:>8} {:>10.5} {:>10.5} {:>9.5} {:>10.5}",
            r.value, r.trials, r.success_rate, r.analytic_success_rate, r.gap, r.similarity_rate
        );
    }
    s
}

/// Default campaign length per mode when `--trials` is not given.
pub fn default_attack_events(mode: AdversaryMode) -> u64 {
    match mode {
        AdversaryMode::Tamper => 10_000,
        AdversaryMode::ForeignBody => 100_000,
        _ => 1_000,
    }
}

pub fn cmd_attack(
    base: &SimConfig,
    mode: AdversaryMode,
    events: u64,
    out: Option<&Path>,
) -> Result<attack::AttackReport, CliError> {
    if mode == AdversaryMode::None {
        return Err(CliError::Usage("--mode none is not an attack".into()));
    }
    let report = attack::campaign(base, mode, events)?;
    if let Some(dir) = out {
        write_file(dir, ATTACK_FILE, &to_pretty(&report))?;
    }
    Ok(report)
}

pub fn render_attack(r: &attack::AttackReport) -> String {
    let mut s = format!(
        "mode {}  runs {}  events {}/{}  attempts {}  silent acceptances {}\n",
        r.mode, r.runs, r.events, r.target_events, r.attempts, r.silent_acceptances
    );
    for (reason, n) in &r.rejects {
        let _ = writeln!(s, "  rejected {reason}: {n}");
    }
    if r.decommit_attempts > 0 {
        let _ = writeln!(
            s,
            "  foreign decommits {} succeeded of {}",
            r.decommit_successes, r.decommit_attempts
        );
    }
    if r.transcript_messages > 0 {
        let _ = writeln!(
            s,
            "  transcript {} messages, {} key leaks",
            r.transcript_messages, r.transcript_key_leaks
        );
    }
    let _ = writeln!(s, "{}", if r.secure() { "PASS secure" } else { "FAIL insecure" });
    s
}

fn describe(e: &TraceEvent) -> String {
    let who = |id: Option<u16>| id.map_or("-".to_string(), |v| v.to_string());
    let what = e.msg.map_or("", |k| match k {
        MessageKind::KeyDistribute => "leader commits r_si under the slave's witness",
        MessageKind::RsiReply => "slave returns r_si committed under its own witness",
        MessageKind::HandoverForward => "outgoing leader forwards a stored reply",
        MessageKind::ElectionCall => "leader calls an election",
        MessageKind::Vote => "slave reports its energy",
        MessageKind::Assign => "leadership assigned",
        MessageKind::Data => "sealed payload",
    });
    let msg = e.msg.map_or("", |k| k.as_str());
    match e.kind {
        TraceKind::Send => format!("{} -> {} send {msg}: {what}", who(e.from), who(e.to)),
        TraceKind::Deliver => format!("{} -> {} deliver {msg}", who(e.from), who(e.to)),
        TraceKind::Drop => format!("{} -> {} dropped {msg}", who(e.from), who(e.to)),
        TraceKind::Accept => format!("{} accepts {msg} from {}", who(e.to), who(e.from)),
        TraceKind::Reject => format!(
            "{} rejects {msg} from {}: {}",
            who(e.to),
            who(e.from),
            e.reason.map_or("", |r| r.as_str())
        ),
        TraceKind::Election => format!("leadership passes from {} to {}", who(e.from), who(e.to)),
        TraceKind::Rekey => format!("leader {} holds a pairwise key with every slave", who(e.from)),
    }
}

/// Trace of the first key establishment, one annotated line per event.
pub fn cmd_demo(cfg: &SimConfig) -> Result<String, CliError> {
    let mut sim = Simulator::new(cfg.clone())?;
    let mut s = format!(
        "{} nodes, p = {}, R = {}, leader {}\n",
        cfg.node_count,
        cfg.p,
        cfg.r,
        sim.leader().0
    );
    while sim.metrics().establishment.rekeys_completed == 0 && sim.tick() < cfg.max_ticks {
        sim.step();
    }
    let done = sim.metrics().establishment.rekeys_completed > 0;
    for e in &sim.trace().events {
        let _ = writeln!(s, "[tick {:>4} #{:<4}] {}", e.tick, e.seq, describe(e));
    }
    let leader = sim.node(sim.leader());
    let _ = writeln!(
        s,
        "{}: {} pairwise keys at leader {}",
        if done { "established" } else { "not established" },
        leader.keys.k_msi_map.len(),
        leader.id.0
    );
    Ok(s)
}
