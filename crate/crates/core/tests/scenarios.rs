//! Bundled scenarios end to end, config handling, and sweeps.

use std::path::PathBuf;

use qnetsim::backends::BackendKind;
use qnetsim::scenario::{self, ScenarioConfig, StopReason, SweepSpec};
use qnetsim::Error;

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&path(name)).unwrap()
}

fn bundled() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(path(""))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_bundled_scenario_runs_clean_on_both_backends() {
    for p in bundled() {
        for kind in [BackendKind::Dense, BackendKind::Stabilizer] {
            let mut cfg = ScenarioConfig::load(&p).unwrap();
            cfg.backend = kind;
            let r = scenario::run(&cfg).unwrap();
            assert!(r.breaches.is_empty(), "{} on {kind:?}: {:?}", p.display(), r.breaches);
            assert_ne!(r.stop, StopReason::TEnd, "{} on {kind:?} hit t_end", p.display());
        }
    }
}

#[test]
fn repeater_chain_counts() {
    let r = scenario::run(&load("repeater-chain.scenario")).unwrap();
    assert_eq!(r.stop, StopReason::Goals);
    assert_eq!(r.end_time, 35.0);
    assert_eq!(r.count("pair-delivered"), 20);
    assert_eq!(r.count("swap"), 20);
    assert_eq!(r.count("purify"), 10);
}

#[test]
fn repeater_chain_on_stabilizer_reports_no_fidelity() {
    let mut cfg = load("repeater-chain.scenario");
    cfg.backend = BackendKind::Stabilizer;
    let r = scenario::run(&cfg).unwrap();
    assert_eq!(r.count("pair-delivered"), 20);
    assert!(r.of_kind("pair-delivered").iter().all(|m| m.fidelity.is_none()));
}

#[test]
fn qtcp_line_counts() {
    let r = scenario::run(&load("qtcp-line.scenario")).unwrap();
    assert_eq!(r.stop, StopReason::Quiescence);
    assert_eq!(r.count("datagram-success"), 40);
    assert_eq!(r.count("flow-done"), 2);
    // three interior swaps per datagram
    assert_eq!(r.count("swap"), 120);
}

#[test]
fn mbqc_scenario_accepts() {
    let r = scenario::run(&load("mbqc-422.scenario")).unwrap();
    let done = r.of_kind("mbqc-done");
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].detail, "accept");
    assert_eq!(r.count("pair-delivered"), 2);
}

#[test]
fn mbqc_injection_from_config_is_rejected() {
    let text = std::fs::read_to_string(path("mbqc-422.scenario")).unwrap();
    let text = text.replace("type = \"mbqc\"", "type = \"mbqc\"\ninjection = { pair = 2, pauli = \"Y\" }");
    let r = scenario::run(&ScenarioConfig::from_toml(&text).unwrap()).unwrap();
    assert_eq!(r.of_kind("mbqc-done")[0].detail, "reject");
    assert_eq!(r.count("pair-delivered"), 0);
}

#[test]
fn purify_pair_improves_werner_input() {
    let r = scenario::run(&load("purify-pair.scenario")).unwrap();
    let f: Vec<f64> = r.of_kind("purify").iter().filter_map(|m| m.fidelity).collect();
    assert!(!f.is_empty());
    for x in f {
        assert!(x > 0.9, "{x}");
    }
}

#[test]
fn toml_round_trip_of_bundled_configs() {
    for p in bundled() {
        let cfg = ScenarioConfig::load(&p).unwrap();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back, "{}", p.display());
    }
}

#[test]
fn config_errors_name_the_field() {
    let base = std::fs::read_to_string(path("repeater-chain.scenario")).unwrap();
    let cases = [
        (base.replace("node_b = 1\nchoose_b", "node_b = 7\nchoose_b"), "protocols[0].node_b"),
        (base.replace("success_prob = 1.0", "success_prob = 1.5"), "link.success_prob"),
        (base.replace("backend = \"dense\"", "backend = \"dense\"\ncolour = 3"), "colour"),
        (base.replace("pairstate = \"perfect_pair\"", "pairstate = \"bogus\""), "bogus"),
    ];
    for (text, needle) in cases {
        match ScenarioConfig::from_toml(&text) {
            Err(e @ Error::Config(_)) => {
                assert!(e.to_string().contains(needle), "{e} lacks {needle}");
                assert_eq!(scenario::exit_code(&e), 1);
            }
            other => panic!("expected config error for {needle}, got {other:?}"),
        }
    }
}

#[test]
fn sweep_over_link_fidelity_is_monotone() {
    let text = std::fs::read_to_string(path("purify-pair.scenario")).unwrap();
    let spec = SweepSpec { param: "link.fidelity".into(), grid: vec![0.6, 0.8, 0.95], metric: "purify.fidelity".into(), repeats: 2 };
    let rows = scenario::sweep(&text, &spec).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].mean < w[1].mean));
    let mut csv = Vec::new();
    scenario::write_sweep(&spec.param, &rows, &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    assert!(csv.starts_with("link.fidelity,mean,stderr,n\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let text = std::fs::read_to_string(path("purify-pair.scenario")).unwrap();
    let spec = SweepSpec { param: "link.colour".into(), grid: vec![1.0], metric: "purify.fidelity".into(), repeats: 1 };
    let e = scenario::sweep(&text, &spec).unwrap_err();
    assert!(matches!(e, Error::NoSuchParam(_)), "{e:?}");
}

#[test]
fn stalled_flows_are_reported() {
    // two flows of window 4 cannot both make progress through 3-slot nodes
    let text = std::fs::read_to_string(path("qtcp-line.scenario")).unwrap().replace("slots = 8", "slots = 3");
    let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
    cfg.link.success_prob = 0.4;
    let r = scenario::run(&cfg).unwrap();
    assert_eq!(r.stop, StopReason::Quiescence);
    assert!(r.count("datagram-success") < 40);
    assert!(r.breaches.iter().any(|b| b.starts_with("liveness: flow")), "{:?}", r.breaches);
}
