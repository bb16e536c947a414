use std::collections::HashMap;
use std::path::PathBuf;

use bsk_core::protocol::{
    seal_data, Key128, MessageKind, NodeId, ProtocolMessage, Reject, Timestamp,
};
use bsk_core::simnet::{
    attack, establishment_trials, run, AdversaryMode, Mesh, Origin, SimConfig, Simulator,
    TraceKind,
};

fn config(name: &str) -> SimConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    SimConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_configs_load() {
    for name in ["default.json", "noiseless.json", "rotation.json"] {
        let c = config(name);
        assert_eq!(c.node_count, 8);
        assert_eq!(c.code.m, 384);
    }
    assert_eq!(config("default.json").p, 0.01);
}

#[test]
fn noiseless_run_is_clean() {
    let out = run(&config("noiseless.json")).unwrap();
    let m = &out.metrics;
    assert_eq!(m.establishment.success_rate, 1.0);
    assert_eq!(m.total_rejects(), 0);
    assert_eq!(m.elections.calls, 0);
    assert!(m.invariants.key_agreement && m.invariants.all_slaves_keyed);
    assert_eq!(m.epochs_completed, 3);
}

#[test]
fn same_config_same_bytes() {
    let cfg = config("default.json");
    let a = run(&cfg).unwrap();
    let b = run(&cfg).unwrap();
    assert_eq!(a.trace.to_jsonl(), b.trace.to_jsonl());
    assert_eq!(a.metrics.to_json_pretty(), b.metrics.to_json_pretty());
    let c = run(&SimConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.trace.to_jsonl(), c.trace.to_jsonl());
}

#[test]
fn stepping_matches_run() {
    let cfg = config("default.json");
    let mut sim = Simulator::new(cfg.clone()).unwrap();
    sim.run_to(700);
    sim.run_to(cfg.max_ticks);
    assert_eq!(sim.tick(), cfg.max_ticks);
    let stepped = sim.finish();
    assert_eq!(stepped.trace.to_jsonl(), run(&cfg).unwrap().trace.to_jsonl());
}

#[test]
fn default_run_rotates_once_and_holds_invariants() {
    let out = run(&config("default.json")).unwrap();
    let m = &out.metrics;
    assert_eq!(m.elections.calls, 1);
    assert_eq!(m.elections.assignments, 1);
    assert_eq!(m.establishment.rekeys_completed, 2);
    let inv = &m.invariants;
    assert_eq!(inv.single_leader_violations, 0);
    assert_eq!(inv.delivery_violations, 0);
    assert_eq!(inv.hierarchy_violations, 0);
    assert!(inv.key_agreement && inv.all_slaves_keyed && inv.key_epoch_uniform);
    assert!(m.energy.conservation_error <= 1e-9);
    for n in &m.energy.nodes {
        assert!(!n.depleted);
        assert!((n.initial - n.spent - n.level).abs() <= 1e-9);
    }
    assert_eq!(m.energy.timeline.len() as u64, m.ticks / 10);
}

#[test]
fn every_delivery_has_a_prior_send() {
    let out = run(&config("default.json")).unwrap();
    let mut pending: HashMap<(Option<u16>, String), i64> = HashMap::new();
    for e in &out.trace.events {
        let key = (e.to, e.digest_hex.clone().unwrap_or_default());
        match e.kind {
            TraceKind::Send => *pending.entry(key).or_default() += 1,
            TraceKind::Deliver => {
                let n = pending.entry(key).or_default();
                *n -= 1;
                assert!(*n >= 0, "delivery without send at tick {}", e.tick);
            }
            _ => {}
        }
    }
    for w in out.trace.events.windows(2) {
        assert!(w[0].tick <= w[1].tick);
        assert_eq!(w[0].seq + 1, w[1].seq);
    }
}

#[test]
fn rotation_rekeys_everyone_and_kills_old_keys() {
    let cfg = config("rotation.json");
    let mut sim = Simulator::new(cfg.clone()).unwrap();
    while sim.metrics().elections.calls == 0 && sim.tick() < cfg.max_ticks {
        sim.step();
    }
    assert_eq!(sim.leader(), NodeId(1));
    let old = sim.node(NodeId(1)).keys.clone();
    let old_ks = old.ks.unwrap();
    let old_k_mn = old.k_mn.unwrap();
    let old_pairwise: Vec<(NodeId, Key128)> = old.k_msi_map.iter().map(|(k, v)| (*k, *v)).collect();
    assert_eq!(old_pairwise.len(), 7);
    sim.run_to(cfg.max_ticks);
    let out = sim.finish();
    let m = &out.metrics;

    assert_eq!(m.elections.calls, 1);
    assert_eq!(m.elections.handovers.len(), 1);
    assert_eq!(m.elections.handovers[0][1..], [1, 5]);
    let leader = &out.nodes[4];
    assert!(leader.is_leader());
    let ks = leader.keys.ks.unwrap();
    assert_ne!(ks, old_ks);
    for n in out.nodes.iter().filter(|n| n.id != leader.id) {
        assert!(!n.is_leader());
        assert_eq!(n.leader, NodeId(5));
        assert_eq!(n.keys.ks, Some(ks));
        assert_eq!(n.keys.k_msi, leader.keys.k_msi_map.get(&n.id).copied());
        assert!(n.keys.k_msi.is_some());
    }
    assert!(m.invariants.key_epoch_uniform);

    let late = Timestamp::new(cfg.max_ticks + 100, 0);
    let mut nodes = out.nodes.clone();
    // Group traffic under the old ks.
    for i in 0..nodes.len() {
        let sender = NodeId(if i == 0 { 2 } else { 1 });
        let msg = seal_data(&old_ks, sender, b"old", late);
        assert_eq!(nodes[i].receive_data(&msg), Err(Reject::BadMac));
    }
    // Pairwise traffic under every old k_msi, sent to the new leader.
    for (slave, k) in &old_pairwise {
        if *slave == NodeId(5) {
            continue;
        }
        let msg = seal_data(k, *slave, b"old", late);
        assert_eq!(nodes[4].receive_data(&msg), Err(Reject::BadMac));
    }
    // Control traffic under the old group key and the old session key.
    let call = ProtocolMessage::authenticated(
        MessageKind::ElectionCall,
        NodeId(5),
        NodeId::NONE,
        late,
        vec![0, 0, 0, 9],
        &old_ks,
    );
    assert_eq!(nodes[2].process_election_call(&call), Err(Reject::BadMac));
    let assign =
        ProtocolMessage::authenticated(MessageKind::Assign, NodeId(5), NodeId::NONE, late, vec![0, 3], &old_ks);
    assert_eq!(nodes[2].process_assign(&assign), Err(Reject::BadMac));
    let body = leader.stored_reply(NodeId(2)).unwrap().to_bytes();
    let fwd = ProtocolMessage::authenticated(
        MessageKind::HandoverForward,
        NodeId(1),
        NodeId(2),
        late,
        body.clone(),
        &old_ks,
    );
    assert_eq!(nodes[4].process_handover_forward(&fwd), Err(Reject::BadMac));
    let reply = ProtocolMessage::authenticated(MessageKind::RsiReply, NodeId(3), NodeId::NONE, late, body, &old_k_mn);
    assert_eq!(nodes[4].process_rsi_reply(&reply), Err(Reject::BadMac));
}

#[test]
fn full_mesh_also_rotates() {
    let mut cfg = config("rotation.json");
    cfg.topology.mesh = Mesh::Full;
    let out = run(&cfg).unwrap();
    assert_eq!(out.metrics.elections.handovers[0][2], 5);
    assert!(out.metrics.invariants.key_agreement);
}

#[test]
fn lossy_links_still_key_everyone() {
    let cfg = SimConfig {
        drop_rate: 0.2,
        p: 0.0,
        ..config("noiseless.json")
    };
    let out = run(&cfg).unwrap();
    let m = &out.metrics;
    assert!(m.messages.dropped > 0);
    assert_eq!(m.messages.sent, m.messages.delivered + m.messages.dropped);
    assert!(m.invariants.all_slaves_keyed);
    assert_eq!(m.invariants.delivery_violations, 0);
}

fn adversarial(mode: AdversaryMode) -> SimConfig {
    let mut cfg = config("default.json");
    cfg.adversary.mode = mode;
    cfg.adversary.rate = 1.0;
    cfg.adversary.foreign_seed = 0xF0F0;
    cfg
}

#[test]
fn replays_are_stale() {
    let m = run(&adversarial(AdversaryMode::Replay)).unwrap().metrics;
    assert!(m.adversary.attempts > 1000);
    assert_eq!(m.adversary.rejects["stale_ts"], m.adversary.attempts);
    assert_eq!(m.adversary.silent_acceptances, 0);
}

#[test]
fn tampering_is_always_rejected() {
    let out = run(&adversarial(AdversaryMode::Tamper)).unwrap();
    let a = &out.metrics.adversary;
    assert!(a.attempts > 1000);
    assert_eq!(a.silent_acceptances, 0);
    assert_eq!(a.rejects.values().sum::<u64>(), a.attempts);
    for reason in a.tamper_rejects_by_region["payload"].keys() {
        assert!(reason == "bad_mac" || reason == "decommit_failed", "{reason}");
    }
    // Honest traffic is unaffected by the copies delivered ahead of it.
    assert_eq!(out.metrics.total_rejects(), 0);
    assert!(out.trace.events.iter().any(|e| e.origin == Some(Origin::Tamper)));
}

#[test]
fn forgeries_are_rejected() {
    let m = run(&adversarial(AdversaryMode::Inject)).unwrap().metrics;
    assert!(m.adversary.attempts > 1000);
    assert_eq!(m.adversary.silent_acceptances, 0);
}

#[test]
fn foreign_body_never_decommits() {
    let m = run(&adversarial(AdversaryMode::ForeignBody)).unwrap().metrics;
    assert!(m.adversary.decommit_attempts > 1000);
    assert_eq!(m.adversary.decommit_successes, 0);
    assert_eq!(m.adversary.silent_acceptances, 0);
}

#[test]
fn eavesdropper_sees_no_key() {
    let m = run(&adversarial(AdversaryMode::Eavesdrop)).unwrap().metrics;
    assert_eq!(m.adversary.transcript_messages, m.messages.sent);
    assert_eq!(m.adversary.transcript_key_leaks, 0);
}

#[test]
fn campaign_reaches_target() {
    let r = attack::campaign(&config("default.json"), AdversaryMode::Replay, 3000).unwrap();
    assert!(r.events >= 3000);
    assert!(r.runs >= 2);
    assert!(r.secure());
    assert_eq!(r.rejects["stale_ts"], r.attempts);
}

#[test]
fn trials_track_the_analytic_rate() {
    let cfg = SimConfig {
        p: 0.05,
        ..config("default.json")
    };
    let s = establishment_trials(&cfg, 2000).unwrap();
    assert!((s.success_rate - s.analytic_success_rate).abs() < 0.02);
    // Both directions decode the same disagreement pattern.
    assert_eq!(s.reply_success_rate, 1.0);
}

#[test]
fn config_errors_name_the_field() {
    let text = std::fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json"),
    )
    .unwrap();
    let broken = text.replace("\"D\": 3", "\"Dx\": 3");
    let e = SimConfig::from_json(&broken).unwrap_err();
    assert_eq!(e.field, "code.D");
    assert!(e.to_string().contains("code.D"));
    assert!(SimConfig::from_json("{").is_err());
}
