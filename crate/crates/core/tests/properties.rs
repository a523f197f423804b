//! Property tests for invariants that should hold for any input.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qnetsim::backends::channels::{is_trace_preserving, Channel};
use qnetsim::backends::{BackendKind, BackendState, DenseState, Gate, Tableau};
use qnetsim::engine::{Sim, TraceLevel};
use qnetsim::net::{Net, RegRef, RegisterSpec};
use qnetsim::pauli::{Pauli, PauliString};
use qnetsim::scenario::{self, ScenarioConfig};
use qnetsim::tag;
use qnetsim::tagquery::{Pattern, TagStore};
use qnetsim::zoo::circuits::{local_entanglement_swap, CircuitResult};
use qnetsim::zoo::states::perfect_pair;

const NAMES: [&str; 3] = ["A", "B", "C"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tag_queries_are_fifo(tags in prop::collection::vec((0usize..3, 0i64..4), 0..40), name in 0usize..3, v in prop::option::of(0i64..4)) {
        let mut store = TagStore::default();
        for (i, &(n, x)) in tags.iter().enumerate() {
            store.push(i as u64, i as f64, tag!(NAMES[n], x));
        }
        let pat = || match v {
            Some(x) => Pattern::new(NAMES[name]).eq(x),
            None => Pattern::new(NAMES[name]).any(),
        };
        let expected: Vec<u64> = tags
            .iter()
            .enumerate()
            .filter(|(_, &(n, x))| n == name && v.is_none_or(|y| y == x))
            .map(|(i, _)| i as u64)
            .collect();
        prop_assert_eq!(store.query(&pat()).map(|e| e.id), expected.first().copied());
        let all: Vec<u64> = store.queryall(&pat()).iter().map(|e| e.id).collect();
        prop_assert_eq!(&all, &expected);
        let mut drained = Vec::new();
        while let Some(e) = store.querydelete(&pat()) {
            drained.push(e.id);
        }
        prop_assert_eq!(&drained, &expected);
        prop_assert_eq!(store.len(), tags.len() - expected.len());
    }

    #[test]
    fn folded_swap_frames_give_a_bell_pair(hops in 2usize..6, order_seed: u64, seed: u64) {
        let sim = Sim::new(seed);
        let net = Net::new(&sim, vec![RegisterSpec::new(2); hops + 1], BackendKind::Dense).unwrap();
        for i in 0..hops {
            net.initialize(&[RegRef::new(i, 1), RegRef::new(i + 1, 0)], &perfect_pair()).unwrap();
        }
        let mut interior: Vec<usize> = (1..hops).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
        rand::seq::SliceRandom::shuffle(interior.as_mut_slice(), &mut rng);
        let (mut fx, mut fz) = (false, false);
        for i in interior {
            let CircuitResult::Bits(x, z) = local_entanglement_swap(&net, RegRef::new(i, 0), RegRef::new(i, 1)).unwrap() else {
                unreachable!()
            };
            fx ^= x;
            fz ^= z;
        }
        let end = RegRef::new(hops, 0);
        if fx {
            net.apply_pauli(end, Pauli::X).unwrap();
        }
        if fz {
            net.apply_pauli(end, Pauli::Z).unwrap();
        }
        let f = net.fidelity(&[RegRef::new(0, 1), end], &perfect_pair()).unwrap();
        prop_assert!((f - 1.0).abs() < 1e-10, "fidelity {}", f);
        prop_assert_eq!(net.num_staterefs(), 1);
    }

    #[test]
    fn tableau_and_dense_expectations_agree(
        n in 1usize..5,
        gates in prop::collection::vec((0usize..9, 0usize..4, 0usize..4), 0..30),
        probe in prop::collection::vec(0usize..4, 4),
    ) {
        let set = [Gate::X, Gate::Y, Gate::Z, Gate::H, Gate::S, Gate::Sdg, Gate::CNOT, Gate::CZ, Gate::SWAP];
        let mut t = BackendState::Tableau(Tableau::new(n));
        let mut d = BackendState::Dense(DenseState::zero(n));
        for (g, a, b) in gates {
            let g = set[g];
            let (a, b) = (a % n, b % n);
            let qs = if g.arity() == 1 { vec![a] } else if a != b { vec![a, b] } else { continue };
            t.apply_gate(g, &qs).unwrap();
            d.apply_gate(g, &qs).unwrap();
        }
        let ps = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];
        let p = PauliString::from_paulis(&probe[..n].iter().map(|&i| ps[i]).collect::<Vec<_>>());
        prop_assert!((t.expectation(&p) - d.expectation(&p)).abs() < 1e-10);
        let td = t.to_dense().trace_distance(&d.to_dense()).unwrap();
        prop_assert!(td < 1e-9, "trace distance {}", td);
    }

    #[test]
    fn channels_are_trace_preserving(p in 0.0f64..=1.0) {
        for ch in [Channel::Depolarize(p), Channel::Dephase(p), Channel::AmplitudeDamp(p)] {
            prop_assert!(is_trace_preserving(&ch.kraus().unwrap(), 1e-12));
            let (terms, _) = ch.pauli_terms().unwrap();
            let total: f64 = terms.iter().map(|(w, _)| w).sum();
            prop_assert!((total - 1.0).abs() < 1e-12 && terms.iter().all(|(w, _)| *w >= -1e-15));
        }
    }

    #[test]
    fn config_round_trips(seed: u64, p in 0.01f64..=1.0, d in 0.1f64..10.0, f in 0.25f64..=1.0, dense: bool) {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/qtcp-line.scenario")).unwrap();
        let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
        cfg.seed = seed;
        cfg.backend = if dense { BackendKind::Dense } else { BackendKind::Stabilizer };
        cfg.link.success_prob = p;
        cfg.link.attempt_duration = d;
        cfg.link.fidelity = Some(f);
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg, back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn qtcp_window_is_never_exceeded(window in 1usize..5, a in 1u64..8, b in 1u64..8, lossy: bool, seed: u64) {
        let text = format!(
            r#"
backend = "stabilizer"
seed = {seed}
[topology]
nodes = [{{ slots = {m} }}, {{ slots = {m} }}, {{ slots = {m} }}, {{ slots = {m} }}]
quantum_edges = [[0, 1], [1, 2], [2, 3]]
classical_latency = 0.3
[link]
success_prob = {p}
[[protocols]]
type = "qtcp"
end_nodes = [0, 3]
window = {window}
[[flows]]
src = 0
dst = 3
npairs = {a}
uuid = 1
[[flows]]
src = 3
dst = 0
npairs = {b}
uuid = 2
[stop]
quiescence = true
"#,
            p = if lossy { 0.4 } else { 1.0 },
            // each datagram in flight can pin two memories per node
            m = 4 * window + 2,
        );
        let mut cfg = ScenarioConfig::from_toml(&text).unwrap();
        cfg.outputs.trace_level = Some(TraceLevel::Full);
        let r = scenario::run(&cfg).unwrap();
        prop_assert!(r.breaches.is_empty(), "{:?}", r.breaches);
        for rec in r.trace.records.iter().filter(|t| t.kind == "window") {
            let v: Vec<usize> = rec.detail.split_whitespace().map(|x| x.parse().unwrap()).collect();
            prop_assert!(v[1] <= v[2] && v[2] == window, "{}", rec.detail);
        }
        prop_assert_eq!(r.count("datagram-success") as u64, a + b);
        prop_assert_eq!(r.count("flow-done"), 2);
    }
}
