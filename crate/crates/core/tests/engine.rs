use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use uwsvc_core::mac_engine::{run_algorithm1, EventKind, MacError, Payload, Phase, RunOutcome};
use uwsvc_core::report;
use uwsvc_core::scenario::{
    golden, load_config, MacScheme, PlannerKind, ScenarioConfig, ScheduleKind,
};
use uwsvc_core::{selftest, VehicleId};

fn scenario(name: &str) -> ScenarioConfig {
    load_config(
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios")
            .join(name),
    )
    .unwrap()
}

fn run(cfg: &ScenarioConfig) -> RunOutcome {
    run_algorithm1(cfg, None).unwrap_or_else(|e| panic!("run failed: {e}"))
}

fn position(cfg: &ScenarioConfig, id: VehicleId) -> [f64; 2] {
    cfg.vehicles.iter().find(|v| v.id == id.0).unwrap().position
}

fn delay(cfg: &ScenarioConfig, a: VehicleId, b: VehicleId) -> f64 {
    let (p, q) = (position(cfg, a), position(cfg, b));
    (p[0] - q[0]).hypot(p[1] - q[1]) / cfg.channel.sound_speed_mps
}

/// (tx time, airtime, sender) by message id.
fn transmissions(o: &RunOutcome) -> BTreeMap<u64, (f64, f64, VehicleId)> {
    o.events
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::Tx { message } => {
                Some((message.id, (e.time, message.airtime(), message.sender)))
            }
            _ => None,
        })
        .collect()
}

fn check_causality(cfg: &ScenarioConfig, o: &RunOutcome) {
    for w in o.events.windows(2) {
        assert!(
            w[1].time >= w[0].time,
            "time went backwards: {:?} then {:?}",
            w[0],
            w[1]
        );
        if w[1].time == w[0].time {
            let key = |e: &uwsvc_core::mac_engine::Event| (e.kind, e.sender);
            assert!(
                key(&w[1]) >= key(&w[0]),
                "tie order: {:?} then {:?}",
                key(&w[0]),
                key(&w[1])
            );
        }
    }
    let tx = transmissions(o);
    let mut rx_count = 0;
    for e in &o.events {
        if let Payload::Rx {
            message, recipient, ..
        } = &e.payload
        {
            let (t0, air, sender) = tx[message];
            let want = t0 + air + delay(cfg, sender, *recipient);
            assert!(
                (e.time - want).abs() <= 1e-9 * want.max(1.0),
                "rx at {} expected {want}",
                e.time
            );
            rx_count += 1;
        }
    }
    assert!(rx_count > 0);
}

#[test]
fn identical_seed_identical_log() {
    let cfg = golden();
    let (a, b) = (run(&cfg), run(&cfg));
    assert_eq!(a.events, b.events);
    assert_eq!(a.metrics, b.metrics);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(run(&other).events, a.events);
}

#[test]
fn causality_and_event_order() {
    let cfg = golden();
    check_causality(&cfg, &run(&cfg));
}

#[test]
fn tdma_receptions_never_overlap_at_a_receiver() {
    let cfg = golden();
    let o = run(&cfg);
    let tx = transmissions(&o);
    let mut busy: BTreeMap<VehicleId, Vec<(f64, f64)>> = BTreeMap::new();
    for e in &o.events {
        if let Payload::Rx {
            message,
            phase,
            recipient,
            ..
        } = &e.payload
        {
            if *phase != Phase::Election {
                busy.entry(*recipient)
                    .or_default()
                    .push((e.time - tx[message].1, e.time));
            }
        }
    }
    for (v, mut iv) in busy {
        iv.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in iv.windows(2) {
            assert!(
                w[1].0 >= w[0].1 - 1e-9,
                "{v}: {:?} overlaps {:?}",
                w[0],
                w[1]
            );
        }
    }
}

fn check_loop_invariant(o: &RunOutcome) {
    assert!(!o.plans.is_empty());
    for sp in &o.plans {
        assert_eq!(sp.decoded.len(), sp.plan.receivers.len());
        for (i, rx) in sp.plan.receivers.iter().enumerate() {
            let want = if sp.plan.active[i] {
                sp.plan.layers[i].layer_count()
            } else {
                1
            };
            assert_eq!(sp.decoded[i], want, "{} -> {rx}", sp.sender);
        }
    }
}

#[test]
fn decoded_layers_match_the_plan() {
    let mut cfg = golden();
    check_loop_invariant(&run(&cfg));
    // The low profile runs out of feasible sets in chunk 2.
    let low = run_algorithm1(&cfg, Some("low")).unwrap_err();
    assert!(
        matches!(low.error, MacError::NoFeasibleSet { chunk: 2, .. }),
        "{low}"
    );
    // Greedy may miss a set the exhaustive search finds.
    cfg.solver.planner = PlannerKind::Greedy;
    for seed in 0..6 {
        cfg.seed = seed;
        match run_algorithm1(&cfg, None) {
            Ok(o) => check_loop_invariant(&o),
            Err(f) => assert!(matches!(f.error, MacError::NoFeasibleSet { .. }), "{f}"),
        }
    }
}

#[test]
fn single_vehicle_is_trivially_the_frv() {
    let mut cfg = golden();
    cfg.vehicles.retain(|v| v.id == 3);
    let o = run(&cfg);
    assert_eq!(o.frv, VehicleId(3));
    assert!(o.satisfied);
    assert!(!o.events.iter().any(|e| e.kind == EventKind::TxStart));
}

#[test]
fn unreachable_qoe_stops_at_the_cap() {
    let cfg = scenario("unreachable_qoe.toml");
    assert_eq!(cfg.max_iterations, 3);
    let o = run(&cfg);
    assert!(!o.satisfied);
    assert_eq!(o.iterations, 3);
    assert_eq!(o.metrics.len(), 3 * cfg.chunks);
    assert!(o.metrics.iter().all(|m| !m.qoe_met));
}

#[test]
fn infeasible_thresholds_fail_with_the_log_attached() {
    let err = run_algorithm1(&scenario("infeasible.toml"), None).unwrap_err();
    assert!(
        matches!(
            err.error,
            MacError::NoFeasibleSet {
                iteration: 0,
                chunk: 0,
                ..
            }
        ),
        "{err}"
    );
    assert!(err.events.iter().any(|e| e.kind == EventKind::TxStart));
}

#[test]
fn tone_lohi_run() {
    let mut cfg = golden();
    cfg.mac.scheme = MacScheme::Tlohi;
    let o = run(&cfg);
    assert!(o.events.iter().any(|e| e.kind == EventKind::ToneContend));
    assert!(!o.events.iter().any(|e| e.kind == EventKind::SlotBoundary));
    check_causality(&cfg, &o);
    check_loop_invariant(&o);
    assert_eq!(run(&cfg).events, o.events);
}

#[test]
fn lossy_links_are_deterministic() {
    let mut cfg = golden();
    cfg.mac.loss_probability = 0.2;
    let a = run_algorithm1(&cfg, None);
    let b = run_algorithm1(&cfg, None);
    assert_eq!(a, b);
    let events = match &a {
        Ok(o) => &o.events,
        Err(f) => &f.events,
    };
    assert!(events.iter().any(|e| matches!(
        e.payload,
        Payload::Rx {
            delivered: false,
            ..
        }
    )));
}

#[test]
fn configured_slot_too_short() {
    let mut cfg = golden();
    cfg.mac.slot_len_s = Some(1e-3);
    let err = run_algorithm1(&cfg, None).unwrap_err();
    assert!(matches!(err.error, MacError::SlotTooShort { .. }), "{err}");
}

#[test]
fn random_consensus_schedule_elects_the_same_frv() {
    let mut cfg = golden();
    let rr = run(&cfg);
    cfg.mac.consensus_schedule = ScheduleKind::Random;
    let rnd = run(&cfg);
    assert_eq!(rr.frv, rnd.frv);
}

/// Hop diameter of the communication graph, from positions alone.
fn diameter(cfg: &ScenarioConfig, range: f64) -> usize {
    let n = cfg.vehicles.len();
    let pos: Vec<[f64; 2]> = cfg.vehicles.iter().map(|v| v.position).collect();
    let adj = |a: usize, b: usize| {
        a != b && (pos[a][0] - pos[b][0]).hypot(pos[a][1] - pos[b][1]) <= range
    };
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if adj(u, v) && dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        best = best.max(*dist.iter().max().unwrap());
    }
    best
}

#[test]
fn ring_topology_agrees_within_the_diameter() {
    let mut cfg = golden();
    cfg.mac.comm_range_m = Some(1100.0);
    let d = diameter(&cfg, 1100.0);
    assert_eq!(d, 2, "golden vehicles form a five-ring at this range");
    let o = run(&cfg);
    for m in &o.metrics {
        assert!(
            m.consensus_converged && m.consensus_rounds <= d,
            "{} rounds",
            m.consensus_rounds
        );
    }
    check_causality(&cfg, &o);
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
}

fn plan_snapshot(o: &RunOutcome) -> serde_json::Value {
    serde_json::json!({
        "frv": o.frv.to_string(),
        "iterations": o.iterations,
        "plans": o.plans.iter().map(|sp| serde_json::json!({
            "sender": sp.sender.to_string(),
            "receivers": sp.plan.receivers.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
            "active": sp.plan.active,
            "layers": sp.plan.layers.iter().map(|l| l.layer_count()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

fn numbers_close(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => a == b,
    }
}

/// Set UWSVC_BLESS=1 to rewrite the snapshot after an intended change.
#[test]
fn golden_snapshot() {
    let cfg = golden();
    let o = run(&cfg);
    let mut csv = Vec::new();
    report::write_metrics(&mut csv, &o.metrics).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let snap = serde_json::to_string_pretty(&plan_snapshot(&o)).unwrap() + "\n";
    let dir = golden_dir();
    if std::env::var_os("UWSVC_BLESS").is_some() {
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("metrics.csv"), &csv).unwrap();
        std::fs::write(dir.join("plans.json"), &snap).unwrap();
    }
    assert_eq!(
        std::fs::read_to_string(dir.join("plans.json")).unwrap(),
        snap
    );
    let want = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(want.lines().count(), csv.lines().count());
    for (w, g) in want.lines().zip(csv.lines()) {
        let (wf, gf): (Vec<&str>, Vec<&str>) = (w.split(',').collect(), g.split(',').collect());
        assert_eq!(wf.len(), gf.len());
        assert!(
            wf.iter().zip(&gf).all(|(a, b)| numbers_close(a, b)),
            "\n{w}\n{g}"
        );
    }
}

#[test]
fn golden_plans_replay_through_the_oracles() {
    let o = run(&golden());
    for sp in &o.plans {
        assert_eq!(
            selftest::enumerate_best_size(&sp.problem),
            Some(sp.plan.qoe_proxy),
            "sender {}",
            sp.sender
        );
    }
    // The FRV holds the largest RS of the last chunk, lowest id on ties.
    let last = o.metrics.last().unwrap();
    let best = last
        .vehicles
        .iter()
        .map(|v| v.rs)
        .fold(f64::NEG_INFINITY, f64::max);
    let want = last.vehicles.iter().find(|v| v.rs == best).unwrap().id;
    assert_eq!(o.frv, want);
}
