use std::path::PathBuf;

use rplmac_core::mac::{
    access_failure_probability, attempt_loss, collision_probability, retry_exhaustion_probability,
    MacParams,
};
use rplmac_core::metrics::MetricKind;
use rplmac_core::solver::solve_network;
use rplmac_core::topology::{build_dodag, load_topology, load_topology_file, Topology};
use rplmac_sim::trace::{DropCause, Fate};
use rplmac_sim::{
    run_replications, run_simulation, ReplicationSummary, ScriptedInterferer, SimConfig,
};

fn fixture(name: &str) -> Topology {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    load_topology_file(path).unwrap()
}

fn single_link(p_bad: f64, lambda: f64) -> Topology {
    load_topology(&format!(
        r#"{{"root":"V0","nodes":[{{"id":"V1","lambda_pps":{lambda}}}],
            "links":[{{"src":"V1","dst":"V0","p_bad":{p_bad}}}]}}"#
    ))
    .unwrap()
}

#[test]
fn contention_free_single_attempt_delay() {
    let topo = single_link(0.0, 1.0);
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 2000.0,
        mac: MacParams::new(3, 3, 0, 0).unwrap(),
        ..SimConfig::default()
    };
    let (_, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    let v1 = &report.nodes[1];
    assert_eq!(v1.reliability, 1.0);
    // (2^3 - 1)/2 + t_cca + t_tx + t_ack = 20.5 slots
    let expected = 20.5 * cfg.timing.slot;
    assert!(
        (v1.mean_delay_s - expected).abs() <= cfg.timing.slot,
        "delay {} vs {expected}",
        v1.mean_delay_s
    );
}

#[test]
fn pure_bernoulli_loss() {
    let topo = single_link(0.5, 1.0);
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 10_000.0,
        mac: MacParams::new(3, 5, 7, 0).unwrap(),
        ..SimConfig::default()
    };
    let (_, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    let v1 = &report.nodes[1];
    let n = (v1.generated - v1.in_flight) as f64;
    assert!(n >= 9_900.0);
    let sigma = (0.25 / n).sqrt();
    assert!(
        (v1.reliability - 0.5).abs() <= 3.0 * sigma,
        "{}",
        v1.reliability
    );
}

#[test]
fn scripted_interferer_matches_drop_probabilities() {
    let (alpha, p_bad) = (0.3, 0.1);
    let mac = MacParams::new(3, 5, 2, 2).unwrap();
    let topo = single_link(p_bad, 1.0);
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 100_000.0,
        mac,
        interferer: Some(ScriptedInterferer {
            busy_probability: alpha,
        }),
        ..SimConfig::default()
    };
    let (_, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    let v1 = &report.nodes[1];
    let n = (v1.generated - v1.in_flight) as f64;
    assert!(n >= 99_000.0);
    let gamma = attempt_loss(collision_probability(alpha, &cfg.timing).unwrap(), p_bad).unwrap();
    let p_cf = access_failure_probability(alpha, gamma, &mac).unwrap();
    let p_cr = retry_exhaustion_probability(alpha, gamma, &mac).unwrap();
    for (observed, p) in [(v1.dropped_access, p_cf), (v1.dropped_retry, p_cr)] {
        let freq = observed as f64 / n;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (freq - p).abs() <= 3.0 * sigma,
            "{freq} vs {p} (sigma {sigma})"
        );
    }
}

#[test]
fn accounting_identity_and_state_time() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(10.0).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 60.0,
        record_trace: true,
        queue_capacity: 2,
        ..SimConfig::default()
    };
    let (trace, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    for r in &report.nodes {
        assert_eq!(
            r.generated,
            r.delivered + r.dropped_access + r.dropped_retry + r.dropped_queue + r.in_flight,
            "{}",
            r.node
        );
    }
    let overflow = trace
        .packets
        .iter()
        .filter(|p| {
            matches!(
                p.fate,
                Fate::Dropped {
                    cause: DropCause::QueueOverflow,
                    ..
                }
            )
        })
        .count();
    assert!(overflow > 0, "small queues overflow at this load");
    assert_eq!(
        trace.packets.len() as u64,
        report.nodes.iter().map(|r| r.generated).sum::<u64>()
    );
    for c in &trace.nodes {
        assert!(
            (c.state_time() - trace.duration_s).abs() < 1e-9,
            "{}",
            c.node
        );
    }
}

#[test]
fn identical_seed_identical_trace() {
    let topo = fixture("fig1a.json");
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 30.0,
        record_trace: true,
        ..SimConfig::default()
    };
    let a = run_simulation(&topo, &dodag, &cfg).unwrap().0;
    let b = run_simulation(&topo, &dodag, &cfg).unwrap().0;
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let c = run_simulation(&topo, &dodag, &SimConfig { seed: 2, ..cfg })
        .unwrap()
        .0;
    assert_ne!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&c).unwrap()
    );
}

#[test]
fn replications_are_reproducible_and_distinct() {
    let topo = fixture("chain3.json");
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 50.0,
        ..SimConfig::default()
    };
    let reports = |k| -> Vec<_> {
        run_replications(&topo, &dodag, &cfg, k)
            .unwrap()
            .into_iter()
            .map(|r| r.1)
            .collect()
    };
    // NaN fields (the root has no traffic) defeat PartialEq
    let render = |v: &dyn std::fmt::Debug| format!("{v:?}");
    let a = reports(5);
    assert_eq!(render(&a), render(&reports(5)));
    assert_ne!(render(&a[0]), render(&a[1]));
    assert_eq!(
        render(&ReplicationSummary::from_reports(&a)),
        render(&ReplicationSummary::from_reports(&reports(5)))
    );
}

#[test]
fn contention_free_limit() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(0.01).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let lossless = {
        let mut doc = topo.to_doc();
        doc.links.iter_mut().for_each(|l| l.p_bad = 0.0);
        Topology::from_doc(doc).unwrap()
    };
    let cfg = SimConfig {
        duration: 20_000.0,
        ..SimConfig::default()
    };
    let (_, report) = run_simulation(&lossless, &dodag, &cfg).unwrap();
    for r in report.nodes.iter().skip(1) {
        assert!(r.reliability >= 0.99, "{} {}", r.node, r.reliability);
        assert!(r.alpha <= 0.01, "{} {}", r.node, r.alpha);
    }
}

#[test]
fn quiet_network_never_switches() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(0.01).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 2_000.0,
        ..SimConfig::default()
    };
    let (trace, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    assert_eq!(report.total_switches, 0);
    assert!(trace.switches.is_empty());
}

#[test]
fn dominant_node_attracts_r_metric_traffic() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(5.0).unwrap();
    topo.set_lambda(topo.index_of("V2").unwrap(), 20.0).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 200.0,
        ..SimConfig::default()
    };
    let reports: Vec<_> = run_replications(&topo, &dodag, &cfg, 5)
        .unwrap()
        .into_iter()
        .map(|r| r.1)
        .collect();
    let summary = ReplicationSummary::from_reports(&reports);
    for id in ["V5", "V6", "V7"] {
        let node = summary.nodes.iter().find(|n| n.node == id).unwrap();
        assert_eq!(node.parent, "V2", "{id}");
    }
}

#[test]
fn backpressure_switches_far_more_than_r_metric() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(10.0).unwrap();
    topo.set_lambda(topo.index_of("V2").unwrap(), 20.0).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let run = |metric| {
        let cfg = SimConfig {
            duration: 120.0,
            metric,
            ..SimConfig::default()
        };
        run_simulation(&topo, &dodag, &cfg)
            .unwrap()
            .1
            .total_switches
    };
    let bp = run(MetricKind::Backpressure { weight: 1.0 });
    let r = run(MetricKind::RMetric);
    assert!(bp >= 5 * r.max(1), "bp {bp} r {r}");
}

#[test]
fn agrees_with_model_on_fig1a() {
    let mut topo = fixture("fig1a.json");
    topo.set_uniform_lambda(5.0).unwrap();
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 200.0,
        ..SimConfig::default()
    };
    let model = solve_network(
        &topo,
        &dodag,
        &cfg.metric,
        &cfg.mac,
        &cfg.timing,
        &cfg.profile,
    )
    .unwrap();
    let (_, report) = run_simulation(&topo, &dodag, &cfg).unwrap();
    assert!((report.avg_reliability - model.mean_reliability(0)).abs() <= 0.05);
}

#[test]
fn trace_lines_are_tagged_json() {
    let topo = fixture("chain3.json");
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: 20.0,
        record_trace: true,
        ..SimConfig::default()
    };
    let (trace, _) = run_simulation(&topo, &dodag, &cfg).unwrap();
    let mut buf = Vec::new();
    trace.write_jsonl(3, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut kinds = std::collections::BTreeSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["run"], 3);
        kinds.insert(v["record"].as_str().unwrap().to_string());
    }
    for k in ["run", "node", "packet", "estimate"] {
        assert!(kinds.contains(k), "{k} missing");
    }
    let packet = text
        .lines()
        .find(|l| l.contains(r#""record":"packet""#))
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(packet).unwrap();
    for field in ["id", "source", "birth_s", "hops", "fate"] {
        assert!(v.get(field).is_some(), "{field}");
    }
}

#[test]
fn rejects_invalid_config() {
    let topo = fixture("chain3.json");
    let dodag = build_dodag(&topo).unwrap();
    let cfg = SimConfig {
        duration: -1.0,
        ..SimConfig::default()
    };
    assert!(run_simulation(&topo, &dodag, &cfg).is_err());
}
