//! Acceptance checks, one line per criterion. Exits non-zero if any fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

use bsk_core::biokeys::epoch_truth;
use bsk_core::fuzzycommit::{commit, decommit, CodeParams, FuzzyError};
use bsk_core::protocol::{
    seal_data, Key128, MessageKind, NodeId, ProtocolMessage, Reject, Timestamp,
};
use bsk_core::simnet::{
    attack, establishment_trials, run, AdversaryMode, SimConfig, Simulator, METRICS_FILE,
    TRACE_FILE,
};
use bsk_core::BitString;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(name: &str) -> SimConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    SimConfig::from_json(&std::fs::read_to_string(path).expect("bundled config")).expect("valid")
}

fn random_bits(rng: &mut StdRng, len: usize) -> BitString {
    BitString::from_bools(&(0..len).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>())
}

fn bits_of(value: u64, len: usize) -> BitString {
    BitString::from_bools(&(0..len).map(|i| (value >> (len - 1 - i)) & 1 == 1).collect::<Vec<_>>())
}

// Error pattern number `index` in base 4: digit 0 leaves a block alone,
// digit j flips position j - 1 of that block.
fn apply_block_pattern(witness: &BitString, blocks: usize, mut index: u64) -> BitString {
    let mut w = witness.clone();
    for b in 0..blocks {
        let digit = (index % 4) as usize;
        index /= 4;
        if digit > 0 {
            w.flip(3 * b + digit - 1);
        }
    }
    w
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let code = CodeParams::default_repetition();
    let mut random_ok = 0u64;
    for _ in 0..10_000 {
        let payload = random_bits(&mut rng, 128);
        let witness = random_bits(&mut rng, 384);
        let c = commit(&code, &payload, &witness).unwrap();
        let mut noisy = witness.clone();
        for b in 0..128 {
            let digit = rng.random_range(0..4);
            if digit > 0 {
                noisy.flip(3 * b + digit - 1);
            }
        }
        if decommit(&c, &noisy).ok().as_ref() == Some(&payload) {
            random_ok += 1;
        }
    }
    let mut exhaustive = 0u64;
    let mut exhaustive_ok = 0u64;
    for k in 1..=8usize {
        let code = CodeParams::repetition(k, 3).unwrap();
        let witness = random_bits(&mut rng, 3 * k);
        for value in 0..(1u64 << k) {
            let payload = bits_of(value, k);
            let c = commit(&code, &payload, &witness).unwrap();
            for pattern in 0..(1u64 << (2 * k)) {
                let noisy = apply_block_pattern(&witness, k, pattern);
                exhaustive += 1;
                if decommit(&c, &noisy).ok().as_ref() == Some(&payload) {
                    exhaustive_ok += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        random_ok == 10_000 && exhaustive_ok == exhaustive && elapsed < Duration::from_secs(10),
        format!(
            "random {random_ok}/10000, exhaustive K<=8 {exhaustive_ok}/{exhaustive}, {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn capability_boundary() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let code = CodeParams::default_repetition();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let mut failures = 0u64;
    let mut wrong_accepts = 0u64;
    let trials = 10_000u64;
    for trial in 0..trials {
        // Cycle through every (block, pair) placement; other blocks get at
        // most one random flip.
        let combo = (trial % (128 * 3)) as usize;
        let (block, (a, b)) = (combo / 3, pairs[combo % 3]);
        let payload = random_bits(&mut rng, 128);
        let witness = random_bits(&mut rng, 384);
        let c = commit(&code, &payload, &witness).unwrap();
        let mut noisy = witness.clone();
        for other in (0..128).filter(|&x| x != block) {
            let digit = rng.random_range(0..4);
            if digit > 0 {
                noisy.flip(3 * other + digit - 1);
            }
        }
        noisy.flip(3 * block + a);
        noisy.flip(3 * block + b);
        match decommit(&c, &noisy) {
            Err(FuzzyError::DecommitFailed) => failures += 1,
            Ok(_) => wrong_accepts += 1,
            Err(_) => {}
        }
    }
    outcome(
        failures == trials && wrong_accepts == 0,
        format!("{failures}/{trials} failures, {wrong_accepts} wrong-key acceptances"),
    )
}

// The closed form, written out independently of the library.
fn predicted_acceptance(p: f64) -> f64 {
    let q = p.powi(3) + 3.0 * p * p * (1.0 - p);
    let mu = 2.0 * q * (1.0 - q);
    ((1.0 - mu).powi(3) + 3.0 * mu * (1.0 - mu).powi(2)).powi(128)
}

// Channel alone: two nodes each take three noisy looks at every bit, fuse
// by majority, and succeed when no 3-bit block disagrees in two places.
fn channel_monte_carlo(p: f64, trials: u64, seed: u64) -> f64 {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ok = 0u64;
    for _ in 0..trials {
        let mut success = true;
        for _ in 0..128 {
            let mut diffs = 0;
            for _ in 0..3 {
                let fused = |rng: &mut StdRng| (0..3).filter(|_| rng.random_bool(p)).count() >= 2;
                if fused(&mut rng) != fused(&mut rng) {
                    diffs += 1;
                }
            }
            if diffs >= 2 {
                success = false;
            }
        }
        ok += u64::from(success);
    }
    ok as f64 / trials as f64
}

fn success_rate_oracle() -> Outcome {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut pass = true;
    for (p, seed) in [(0.01, 11u64), (0.05, 12)] {
        let mc = channel_monte_carlo(p, 20_000, seed);
        let s = predicted_acceptance(p);
        let ok = (mc - s).abs() <= 0.01;
        pass &= ok;
        checks.push(format!("channel MC p={p}: {mc:.5} vs {s:.5}"));
    }

    let cfg = SimConfig {
        node_count: 8,
        p: 0.01,
        r: 3,
        ..config("default.json")
    };
    let stats = establishment_trials(&cfg, 20_000).unwrap();
    let s = predicted_acceptance(0.01);
    let gap = (stats.success_rate - s).abs();
    let library_agrees = (stats.analytic_success_rate - s).abs() < 1e-12;
    let elapsed = start.elapsed();
    pass &= gap <= 0.01 && library_agrees && elapsed < Duration::from_secs(60);
    checks.push(format!(
        "empirical {:.5} over {} slave attempts vs analytic {s:.5} (gap {gap:.5}, limit 0.01), {:.1}s (limit 60s)",
        stats.success_rate,
        stats.slave_attempts,
        elapsed.as_secs_f64()
    ));
    outcome(pass, checks.join("; "))
}

fn adversarial(mode: AdversaryMode) -> SimConfig {
    let mut cfg = config("default.json");
    cfg.adversary.mode = mode;
    cfg.adversary.rate = 1.0;
    cfg.adversary.foreign_seed = 0xF0EE_1600;
    cfg
}

fn replay() -> Outcome {
    let m = run(&adversarial(AdversaryMode::Replay)).unwrap().metrics;
    let a = &m.adversary;
    let stale = a.rejects["stale_ts"];
    outcome(
        a.attempts > 0 && stale == a.attempts && a.silent_acceptances == 0,
        format!("{stale}/{} replays rejected as stale_ts", a.attempts),
    )
}

fn integrity() -> Outcome {
    let r = attack::campaign(&config("default.json"), AdversaryMode::Tamper, 10_000).unwrap();
    let rejected: u64 = r.rejects.values().sum();
    let payload = r.tamper_rejects_by_region.get("payload").cloned().unwrap_or_default();
    let payload_reasons_ok = payload
        .keys()
        .all(|k| k == "bad_mac" || k == "decommit_failed");
    let header = r.tamper_rejects_by_region.get("header").cloned().unwrap_or_default();
    outcome(
        r.events >= 10_000
            && rejected == r.attempts
            && r.silent_acceptances == 0
            && payload_reasons_ok,
        format!(
            "{rejected}/{} tampered deliveries rejected, {} silent; payload flips {:?}; header flips {:?}",
            r.attempts, r.silent_acceptances, payload, header
        ),
    )
}

fn foreign_body() -> Outcome {
    let r = attack::campaign(
        &adversarial(AdversaryMode::ForeignBody),
        AdversaryMode::ForeignBody,
        100_000,
    )
    .unwrap();
    outcome(
        r.decommit_attempts >= 100_000 && r.decommit_successes == 0 && r.silent_acceptances == 0,
        format!(
            "{} decommit attempts over {} runs, {} successes",
            r.decommit_attempts, r.runs, r.decommit_successes
        ),
    )
}

fn leader_rotation() -> Outcome {
    let cfg = config("rotation.json");
    let mut sim = Simulator::new(cfg.clone()).unwrap();
    while sim.metrics().elections.calls == 0 && sim.tick() < cfg.max_ticks {
        sim.step();
    }
    let old_leader = sim.leader();
    let old = sim.node(old_leader).keys.clone();
    sim.run_to(cfg.max_ticks);
    let out = sim.finish();
    let m = &out.metrics;
    let Some(new_leader) = out.nodes.iter().find(|n| n.is_leader()) else {
        return outcome(false, "no leader at end of run");
    };
    let ks = new_leader.keys.ks;
    let others: Vec<_> = out.nodes.iter().filter(|n| n.id != new_leader.id).collect();
    let agreeing = others
        .iter()
        .filter(|n| {
            n.keys.ks == ks
                && n.keys.k_msi.is_some()
                && n.keys.k_msi == new_leader.keys.k_msi_map.get(&n.id).copied()
        })
        .count();

    // Messages keyed under the outgoing hierarchy, with fresh timestamps.
    let late = Timestamp::new(cfg.max_ticks + 10, 0);
    let old_ks = old.ks.unwrap();
    let mut nodes = out.nodes.clone();
    let mut offered = 0;
    let mut rejected = 0;
    let mut tally = |r: Result<(), Reject>| {
        offered += 1;
        rejected += u32::from(r.is_err());
    };
    let leader_idx = usize::from(new_leader.id.0) - 1;
    for i in 0..nodes.len() {
        let sender = if nodes[i].id == old_leader { NodeId(2) } else { old_leader };
        let group = seal_data(&old_ks, sender, b"old group", late);
        tally(nodes[i].receive_data(&group).map(|_| ()));
        let call = ProtocolMessage::authenticated(
            MessageKind::ElectionCall,
            sender,
            NodeId::NONE,
            late,
            7u32.to_be_bytes().to_vec(),
            &old_ks,
        );
        if i != leader_idx {
            tally(nodes[i].process_election_call(&call).map(|_| ()));
        }
    }
    for (slave, k) in &old.k_msi_map {
        if *slave == new_leader.id {
            continue;
        }
        let msg = seal_data(k, *slave, b"old pairwise", late);
        tally(nodes[leader_idx].receive_data(&msg).map(|_| ()));
        let reply = ProtocolMessage::authenticated(
            MessageKind::RsiReply,
            *slave,
            NodeId::NONE,
            late,
            new_leader.stored_reply(*slave).unwrap().to_bytes(),
            &old.k_mn.unwrap(),
        );
        tally(nodes[leader_idx].process_rsi_reply(&reply).map(|_| ()));
    }
    outcome(
        m.elections.calls == 1
            && m.elections.handovers.len() == 1
            && agreeing == 7
            && offered > 0
            && rejected == offered
            && m.invariants.single_leader_violations == 0,
        format!(
            "{} election(s), handover {:?}, {agreeing}/7 non-leaders hold the new ks and k_msi, {rejected}/{offered} old-key messages rejected",
            m.elections.calls, m.elections.handovers
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = config("default.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&cfg).unwrap().write_to(a.path()).unwrap();
    run(&cfg).unwrap().write_to(b.path()).unwrap();
    let same = |f: &str| std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
    let trace = same(TRACE_FILE);
    let metrics = same(METRICS_FILE);
    outcome(
        trace && metrics,
        format!("trace identical: {trace}, metrics identical: {metrics}"),
    )
}

fn monobit() -> Outcome {
    let model = SimConfig::default().body_model();
    let mut ones = 0u64;
    let mut total = 0u64;
    let mut epoch = 0;
    while total < 1_000_000 {
        let t = epoch_truth(&model, epoch);
        ones += t.count_ones() as u64;
        total += t.len() as u64;
        epoch += 1;
    }
    let truth = ones as f64 / total as f64;

    let code = CodeParams::default_repetition();
    let mut rng = StdRng::seed_from_u64(0x5eed_0009);
    let (mut d_ones, mut d_total) = (0u64, 0u64);
    while d_total < 1_000_000 {
        let mut key = [0u8; 16];
        rng.fill_bytes(&mut key);
        let payload = Key128(key).to_bits();
        let witness = random_bits(&mut rng, 384);
        let c = commit(&code, &payload, &witness).unwrap();
        d_ones += c.delta.count_ones() as u64;
        d_total += c.delta.len() as u64;
    }
    let delta = d_ones as f64 / d_total as f64;
    let within = |x: f64| (0.495..=0.505).contains(&x);
    outcome(
        within(truth) && within(delta),
        format!("truth ones {truth:.5} over {total} bits, delta ones {delta:.5} over {d_total} bits (bound [0.495, 0.505])"),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("fuzzy commitment round trip", round_trip),
        ("capability boundary", capability_boundary),
        ("end-to-end success-rate oracle", success_rate_oracle),
        ("replay rejection", replay),
        ("integrity under single-bit tampering", integrity),
        ("foreign-body attacker", foreign_body),
        ("leader rotation", leader_rotation),
        ("determinism", determinism),
        ("randomness smoke test", monobit),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {verdict} {name} [{:.1}s]: {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
