//! Measurement-based distillation with a CSS code: each side prepares the
//! resource state on its storage slots, Bell-measures it against the noisy
//! input pairs, and the two sides compare parity words to decide.
//!
//! Vertex layout on each side: `0..n` code qubits, `n..n+k` outputs. Input
//! pair `i` joins the communication slots of vertex `i` on both sides.

use std::rc::Rc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backends::tableau::{canonical_form, Tableau};
use crate::backends::{BackendKind, Basis, Gate};
use crate::engine::{Condition, ProcessId, Sim};
use crate::error::{Error, Result};
use crate::gf2::{self, Row};
use crate::metrics::MetricsRecord;
use crate::net::{Net, RegRef, RegisterSpec, Target};
use crate::pauli::{Pauli, PauliString};
use crate::protocols::{self, EntanglerConfig, GraphSpec, SlotFilter};
use crate::symbolics::SymState;
use crate::tagquery::Pattern;
use crate::tags;
use crate::zoo::states;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CssCodeSpec {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub x_checks: Vec<Row>,
    pub z_checks: Vec<Row>,
}

impl CssCodeSpec {
    pub fn new(n: usize, k: usize, d: usize, x_checks: Vec<Row>, z_checks: Vec<Row>) -> Result<Self> {
        let code = CssCodeSpec { n, k, d, x_checks, z_checks };
        code.validate()?;
        Ok(code)
    }

    /// The [4,2,2] code with checks XXXX and ZZZZ.
    pub fn code_422() -> Self {
        CssCodeSpec { n: 4, k: 2, d: 2, x_checks: vec![vec![true; 4]], z_checks: vec![vec![true; 4]] }
    }

    /// No checks at all: every qubit is logical.
    pub fn trivial(n: usize) -> Self {
        CssCodeSpec { n, k: n, d: 1, x_checks: vec![], z_checks: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > 63 {
            return Err(Error::Config(format!("code length {} outside 1..=63", self.n)));
        }
        if self.x_checks.iter().chain(&self.z_checks).any(|r| r.len() != self.n) {
            return Err(Error::Config("check row length differs from n".into()));
        }
        for hx in &self.x_checks {
            for hz in &self.z_checks {
                if gf2::dot(hx, hz) {
                    return Err(Error::NotCss(format!("X check {} overlaps Z check {} oddly", bits(hx), bits(hz))));
                }
            }
        }
        let k = self.n - gf2::rank(&self.x_checks) - gf2::rank(&self.z_checks);
        if k != self.k {
            return Err(Error::Config(format!("checks encode {k} logical qubits, not {}", self.k)));
        }
        if self.k == 0 {
            return Err(Error::Config("code encodes nothing".into()));
        }
        Ok(())
    }

    /// Logical X and Z supports, paired so that `x[i]·z[j] = δij`.
    pub fn logicals(&self) -> (Vec<Row>, Vec<Row>) {
        let mut xs = logical_reps(&self.z_checks, &self.x_checks, self.n);
        let mut zs = logical_reps(&self.x_checks, &self.z_checks, self.n);
        for i in 0..self.k {
            let j = (i..self.k).find(|&j| gf2::dot(&xs[i], &zs[j])).expect("logicals pair up");
            zs.swap(i, j);
            for l in 0..self.k {
                if l == i {
                    continue;
                }
                if gf2::dot(&xs[l], &zs[i]) {
                    let xi = xs[i].clone();
                    gf2::xor_into(&mut xs[l], &xi);
                }
                if gf2::dot(&xs[i], &zs[l]) {
                    let zi = zs[i].clone();
                    gf2::xor_into(&mut zs[l], &zi);
                }
            }
        }
        (xs, zs)
    }

    /// X-check syndrome of the XX word and Z-check syndrome of the ZZ word.
    pub fn syndrome(&self, xx: u64, zz: u64) -> (Row, Row) {
        let (xv, zv) = (word_bits(xx, self.n), word_bits(zz, self.n));
        (
            self.x_checks.iter().map(|h| gf2::dot(h, &xv)).collect(),
            self.z_checks.iter().map(|h| gf2::dot(h, &zv)).collect(),
        )
    }
}

fn bits(r: &[bool]) -> String {
    r.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn word_bits(w: u64, n: usize) -> Row {
    (0..n).map(|i| (w >> i) & 1 == 1).collect()
}

/// Vectors commuting with `anti` that are independent of `same`'s row space.
fn logical_reps(anti: &[Row], same: &[Row], n: usize) -> Vec<Row> {
    let mut span: Vec<Row> = same.to_vec();
    let mut out = Vec::new();
    for v in gf2::kernel(anti, n) {
        span.push(v.clone());
        if gf2::rank(&span) == span.len().min(gf2::rank(same) + out.len() + 1) && gf2::rank(&span) > gf2::rank(same) + out.len() {
            out.push(v);
        } else {
            span.pop();
        }
    }
    out
}

/// Stabilizer generators of the resource state on `n + k` qubits: the code's
/// checks plus `X̄j X(n+j)` and `Z̄j Z(n+j)` for every logical qubit.
pub fn resource_state_generators(code: &CssCodeSpec) -> Result<Vec<PauliString>> {
    code.validate()?;
    let m = code.n + code.k;
    let mut gens = Vec::new();
    let lift = |r: &Row, p: Pauli| {
        let mut s = PauliString::identity(m);
        for (q, &b) in r.iter().enumerate() {
            if b {
                s.set(q, p);
            }
        }
        s
    };
    for h in gf2_basis(&code.x_checks) {
        gens.push(lift(&h, Pauli::X));
    }
    for h in gf2_basis(&code.z_checks) {
        gens.push(lift(&h, Pauli::Z));
    }
    let (xs, zs) = code.logicals();
    for j in 0..code.k {
        let mut gx = lift(&xs[j], Pauli::X);
        gx.set(code.n + j, Pauli::X);
        let mut gz = lift(&zs[j], Pauli::Z);
        gz.set(code.n + j, Pauli::Z);
        gens.push(gx);
        gens.push(gz);
    }
    Ok(gens)
}

fn gf2_basis(rows: &[Row]) -> Vec<Row> {
    let mut m = rows.to_vec();
    let r = gf2::rref(&mut m).len();
    m.truncate(r);
    m
}

/// Graph whose state, after `fixups` in order, is the resource state.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceSpec {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
    pub fixups: Vec<(usize, Gate)>,
}

pub fn resource_state_spec(code: &CssCodeSpec) -> Result<ResourceSpec> {
    let target = resource_state_generators(code)?;
    let m = target.len();
    let mut t = Tableau::from_stabilizers(&target)?;
    // qubits outside the X pivots get a Hadamard, which makes the X block invertible
    let canon = canonical_form(&target);
    let xpivots: Vec<usize> = canon.iter().filter_map(|s| s.x.iter().position(|&b| b)).collect();
    let hset: Vec<usize> = (0..m).filter(|q| !xpivots.contains(q)).collect();
    for &q in &hset {
        t.h(q);
    }
    let sset: Vec<usize> = t.canonical().iter().enumerate().filter(|(v, s)| s.z[*v]).map(|(v, _)| v).collect();
    for &q in &sset {
        t.sdg(q);
    }
    let canon = t.canonical();
    let zset: Vec<usize> = canon.iter().enumerate().filter(|(_, s)| s.is_negative()).map(|(v, _)| v).collect();
    for &q in &zset {
        t.z(q);
    }
    let mut edges = Vec::new();
    for (v, s) in t.canonical().iter().enumerate() {
        debug_assert!(s.x.iter().enumerate().all(|(q, &b)| b == (q == v)));
        for w in v + 1..m {
            if s.z[w] {
                edges.push((v, w));
            }
        }
    }
    let graph = Tableau::from_stabilizers(&states::graph_state_generators(m, &edges))?;
    if !graph.same_state(&t) {
        return Err(Error::InvariantBreach("graph form of the resource state does not match".into()));
    }
    let mut fixups: Vec<(usize, Gate)> = zset.iter().map(|&q| (q, Gate::Z)).collect();
    fixups.extend(sset.iter().map(|&q| (q, Gate::S)));
    fixups.extend(hset.iter().map(|&q| (q, Gate::H)));
    Ok(ResourceSpec { vertices: m, edges, fixups })
}

/// Node layout and settings for one distillation session.
#[derive(Clone, Debug)]
pub struct MbqcConfig {
    pub code: CssCodeSpec,
    pub resource: ResourceSpec,
    pub alice: Vec<usize>,
    pub bob: Vec<usize>,
    pub comm_slot: usize,
    pub storage_slot: usize,
    pub session: u64,
    pub pairstate: SymState,
    /// Pauli applied to Bob's half of one input pair before measuring.
    pub injection: Option<(usize, Pauli)>,
    pub success_prob: f64,
    pub attempt_duration: f64,
}

impl MbqcConfig {
    pub fn validate(&self, net: &Net) -> Result<()> {
        let m = self.code.n + self.code.k;
        if self.alice.len() != m || self.bob.len() != m {
            return Err(Error::Config(format!("each side needs {m} nodes")));
        }
        for i in 0..self.code.n {
            if !net.adjacent(self.alice[i], self.bob[i]) {
                return Err(Error::NotAdjacent(self.alice[i], self.bob[i]));
            }
        }
        if let Some((i, _)) = self.injection {
            if i >= self.code.n {
                return Err(Error::Config(format!("injection on pair {i} of {}", self.code.n)));
            }
        }
        Ok(())
    }

    fn side(&self, bob: bool) -> &[usize] {
        if bob {
            &self.bob
        } else {
            &self.alice
        }
    }
}

/// Two sides of `n + k` nodes with two slots each (communication 0,
/// storage 1), resource-graph edges inside each side and input links
/// across. Classical latency `latency` on every edge.
pub fn build_network(sim: &Sim, code: CssCodeSpec, backend: BackendKind, latency: f64) -> Result<(Net, MbqcConfig)> {
    let resource = resource_state_spec(&code)?;
    let m = resource.vertices;
    let net = Net::new(sim, vec![RegisterSpec::new(2); 2 * m], backend)?;
    let alice: Vec<usize> = (0..m).collect();
    let bob: Vec<usize> = (m..2 * m).collect();
    for &(a, b) in &resource.edges {
        net.add_quantum_edge(alice[a], alice[b])?;
        net.add_quantum_edge(bob[a], bob[b])?;
    }
    for i in 0..code.n {
        net.add_quantum_edge(alice[i], bob[i])?;
    }
    net.mirror_classical(latency)?;
    let cfg = MbqcConfig {
        code,
        resource,
        alice,
        bob,
        comm_slot: 0,
        storage_slot: 1,
        session: 1,
        pairstate: states::perfect_pair(),
        injection: None,
        success_prob: 1.0,
        attempt_duration: 1.0,
    };
    Ok((net, cfg))
}

/// Bell-measure each communication/storage pair on one side, pack the
/// parities (bit `i` for pair `i`), tag the local chief and tell the remote one.
pub fn purifier_bell_measurements(net: &Net, cfg: &MbqcConfig, bob: bool) -> Result<(u64, u64)> {
    let nodes = cfg.side(bob);
    let (chief, remote) = (nodes[0], cfg.side(!bob)[0]);
    let (mut xx, mut zz) = (0u64, 0u64);
    for (i, &node) in nodes[..cfg.code.n].iter().enumerate() {
        let c = RegRef::new(node, cfg.comm_slot);
        let s = RegRef::new(node, cfg.storage_slot);
        net.apply_gate(Gate::CNOT, &[c, s])?;
        net.apply_gate(Gate::H, &[c])?;
        if net.project_traceout(c, Basis::Z)?.bit() {
            xx |= 1 << i;
        }
        if net.project_traceout(s, Basis::Z)?.bit() {
            zz |= 1 << i;
        }
        // the resource vertex is consumed with its measurement
        while net.querydelete(Target::Slot(s), &Pattern::new(tags::GRAPH_STATE_STORAGE)).is_some() {}
    }
    let t = tags::purifier_results(chief, xx, zz, cfg.session);
    net.tag(Target::Slot(RegRef::new(chief, cfg.storage_slot)), t.clone())?;
    net.put(remote, t, chief)?;
    Ok((xx, zz))
}

/// Wait for both parity words of this session, check the syndrome and
/// either fix up and tag the outputs or discard them. Returns success.
pub async fn purification_tracker(net: Net, cfg: Rc<MbqcConfig>, bob: bool) -> Result<bool> {
    let sim = net.sim().clone();
    let nodes = cfg.side(bob);
    let remote_nodes = cfg.side(!bob);
    let (chief, remote) = (nodes[0], remote_nodes[0]);
    let chief_slot = Target::Slot(RegRef::new(chief, cfg.storage_slot));
    let mb = Target::Buffer(chief);
    let local_pat = Pattern::new(tags::PURIFIER_RESULTS).eq(chief).any().any().eq(cfg.session);
    let remote_pat = Pattern::new(tags::PURIFIER_RESULTS).eq(remote).any().any().eq(cfg.session);
    let (local, msg) = loop {
        let Some(local) = net.query(chief_slot, &local_pat) else {
            sim.wait(net.onchange(chief_slot)).await;
            continue;
        };
        let Some(msg) = net.querydelete(mb, &remote_pat) else {
            sim.wait(net.onchange(mb)).await;
            continue;
        };
        net.untag(chief_slot, local.id);
        break (local.tag, msg.tag);
    };
    let xx = (local.int(1) ^ msg.int(1)) as u64;
    let zz = (local.int(2) ^ msg.int(2)) as u64;
    let (sx, sz) = cfg.code.syndrome(xx, zz);
    let n = cfg.code.n;
    let outputs: Vec<RegRef> = (0..cfg.code.k).map(|j| RegRef::new(nodes[n + j], cfg.storage_slot)).collect();
    let ok = !sx.iter().chain(&sz).any(|&b| b);
    if ok {
        if bob {
            let (lx, lz) = cfg.code.logicals();
            let (xv, zv) = (word_bits(xx, n), word_bits(zz, n));
            for (j, &o) in outputs.iter().enumerate() {
                if gf2::dot(&lz[j], &zv) {
                    net.apply_gate(Gate::X, &[o])?;
                }
                if gf2::dot(&lx[j], &xv) {
                    net.apply_gate(Gate::Z, &[o])?;
                }
            }
        }
        for (j, &o) in outputs.iter().enumerate() {
            net.tag(Target::Slot(o), tags::purified_counterpart(remote_nodes[n + j], cfg.storage_slot, cfg.session))?;
        }
    } else {
        for &o in &outputs {
            net.traceout(o)?;
        }
    }
    net.record(
        MetricsRecord::new(sim.now(), "mbqc-syndrome")
            .nodes(chief, remote)
            .flow(cfg.session, 0)
            .detail(format!("{} {}{}", if ok { "accept" } else { "reject" }, bits(&sx), bits(&sz))),
    );
    Ok(ok)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MbqcOutcome {
    pub success: bool,
    /// Bell fidelity of each output pair, dense backend only.
    pub fidelities: Vec<f64>,
    /// Fidelity of all output pairs jointly against the ideal product.
    pub joint_fidelity: Option<f64>,
}

pub fn spawn_session(net: &Net, cfg: MbqcConfig) -> Result<ProcessId> {
    cfg.validate(net)?;
    let n = net.clone();
    net.sim().spawn(async move { session(n, Rc::new(cfg)).await })
}

/// One full run: resource states, input pairs, Bell measurements, decision.
pub async fn session(net: Net, cfg: Rc<MbqcConfig>) -> Result<MbqcOutcome> {
    let sim = net.sim().clone();
    let (n, k) = (cfg.code.n, cfg.code.k);
    let mut builders = Vec::new();
    for (side, bob) in [false, true].into_iter().enumerate() {
        let spec = GraphSpec {
            vertices: cfg.side(bob).to_vec(),
            edges: cfg.resource.edges.clone(),
            comm_slot: cfg.comm_slot,
            storage_slot: cfg.storage_slot,
            uuid: cfg.session * 2 + side as u64,
            success_prob: cfg.success_prob,
            attempt_duration: cfg.attempt_duration,
        };
        builders.push(protocols::spawn_graph_state_constructor(&net, spec)?);
    }
    sim.wait(all_done(&builders)).await;
    for pid in &builders {
        if let Err(e) = sim.output::<Result<Vec<Vec<(usize, usize)>>>>(*pid).expect("constructor finished").as_ref() {
            return Err(e.clone());
        }
    }
    for bob in [false, true] {
        let nodes = cfg.side(bob);
        for &(v, g) in &cfg.resource.fixups {
            net.apply_gate(g, &[RegRef::new(nodes[v], cfg.storage_slot)])?;
        }
    }

    let mut links = Vec::new();
    for i in 0..n {
        let mut e = EntanglerConfig::new(cfg.alice[i], cfg.bob[i]);
        e.pairstate = cfg.pairstate.clone();
        e.choose_a = SlotFilter::single(cfg.comm_slot);
        e.choose_b = SlotFilter::single(cfg.comm_slot);
        e.success_prob = cfg.success_prob;
        e.attempt_duration = cfg.attempt_duration;
        e.rounds = Some(1);
        e.tag = false;
        links.push(protocols::spawn_entangler(&net, e)?);
    }
    sim.wait(all_done(&links)).await;
    if let Some((i, p)) = cfg.injection {
        let gate = match p {
            Pauli::I => None,
            Pauli::X => Some(Gate::X),
            Pauli::Y => Some(Gate::Y),
            Pauli::Z => Some(Gate::Z),
        };
        if let Some(g) = gate {
            net.apply_gate(g, &[RegRef::new(cfg.bob[i], cfg.comm_slot)])?;
        }
    }

    let mut trackers = Vec::new();
    for bob in [false, true] {
        let (n2, c2) = (net.clone(), cfg.clone());
        trackers.push(sim.spawn(async move { purification_tracker(n2, c2, bob).await })?);
    }
    for bob in [false, true] {
        purifier_bell_measurements(&net, &cfg, bob)?;
    }
    sim.wait(all_done(&trackers)).await;
    let mut verdicts = Vec::new();
    for pid in &trackers {
        match sim.output::<Result<bool>>(*pid).expect("tracker finished").as_ref() {
            Ok(b) => verdicts.push(*b),
            Err(e) => return Err(e.clone()),
        }
    }
    if verdicts[0] != verdicts[1] {
        return Err(Error::InvariantBreach("the two sides disagree on the syndrome".into()));
    }
    let mut out = MbqcOutcome { success: verdicts[0], ..Default::default() };
    if out.success && net.backend(cfg.alice[0])? == BackendKind::Dense {
        let mut all = Vec::new();
        let mut ideal: Option<SymState> = None;
        for j in 0..k {
            let pair = [RegRef::new(cfg.alice[n + j], cfg.storage_slot), RegRef::new(cfg.bob[n + j], cfg.storage_slot)];
            out.fidelities.push(net.fidelity(&pair, &states::perfect_pair())?);
            all.extend(pair);
            ideal = Some(match ideal {
                None => states::perfect_pair(),
                Some(s) => s.tensor(&states::perfect_pair()),
            });
        }
        if let Some(ideal) = ideal {
            out.joint_fidelity = Some(net.fidelity(&all, &ideal)?);
        }
    }
    for f in &out.fidelities {
        net.record(MetricsRecord::new(sim.now(), "pair-delivered").flow(cfg.session, 0).fidelity(*f));
    }
    Ok(out)
}

fn all_done(pids: &[ProcessId]) -> Condition {
    pids.iter().map(|&p| Condition::ProcessDone(p)).reduce(|a, b| a & b).unwrap_or(Condition::AllOf(vec![]))
}

/// Run one session to completion on a fresh simulator.
pub fn run_once(seed: u64, backend: BackendKind, configure: impl FnOnce(&mut MbqcConfig)) -> Result<(MbqcOutcome, Net)> {
    let sim = Sim::new(seed);
    let (net, mut cfg) = build_network(&sim, CssCodeSpec::code_422(), backend, 1.0)?;
    configure(&mut cfg);
    let pid = spawn_session(&net, cfg)?;
    sim.run();
    match sim.output::<Result<MbqcOutcome>>(pid) {
        Some(r) => match r.as_ref() {
            Ok(o) => Ok((o.clone(), net)),
            Err(e) => Err(e.clone()),
        },
        None => {
            warn!("session did not finish");
            Err(Error::InvariantBreach("session stalled".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logicals_of_422_pair_up() {
        let code = CssCodeSpec::code_422();
        let (xs, zs) = code.logicals();
        assert_eq!(xs.len(), 2);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(gf2::dot(&xs[i], &zs[j]), i == j);
            }
            assert!(!gf2::dot(&xs[i], &code.z_checks[0]));
            assert!(!gf2::dot(&zs[i], &code.x_checks[0]));
        }
    }

    #[test]
    fn non_commuting_checks_rejected() {
        let e = CssCodeSpec::new(2, 0, 1, vec![vec![true, false]], vec![vec![true, false]]).unwrap_err();
        assert!(matches!(e, Error::NotCss(_)));
    }

    #[test]
    fn trivial_code_gives_disjoint_edges() {
        let r = resource_state_spec(&CssCodeSpec::trivial(3)).unwrap();
        let mut e = r.edges.clone();
        e.sort();
        assert_eq!(e, vec![(0, 3), (1, 4), (2, 5)]);
    }

    #[test]
    fn graph_plus_fixups_is_the_resource_state() {
        let code = CssCodeSpec::code_422();
        let r = resource_state_spec(&code).unwrap();
        assert_eq!(r.vertices, 6);
        let mut t = Tableau::from_stabilizers(&states::graph_state_generators(6, &r.edges)).unwrap();
        for &(q, g) in &r.fixups {
            match g {
                Gate::H => t.h(q),
                Gate::S => t.s(q),
                Gate::Z => t.z(q),
                _ => unreachable!(),
            }
        }
        let target = Tableau::from_stabilizers(&resource_state_generators(&code).unwrap()).unwrap();
        assert!(t.same_state(&target));
    }

    #[test]
    fn noiseless_session_gives_perfect_pairs() {
        let (out, _) = run_once(5, BackendKind::Dense, |_| {}).unwrap();
        assert!(out.success);
        assert_eq!(out.fidelities.len(), 2);
        assert!((out.joint_fidelity.unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn x_error_is_detected_and_cleans_up() {
        let (out, net) = run_once(6, BackendKind::Dense, |c| c.injection = Some((2, Pauli::X))).unwrap();
        assert!(!out.success);
        for node in 0..net.num_nodes() {
            for s in 0..2 {
                let r = RegRef::new(node, s);
                assert!(!net.is_assigned(r));
                assert!(net.slot_tags(r).is_empty(), "{r} {:?}", net.slot_tags(r));
            }
        }
    }

    #[test]
    fn every_single_pauli_is_detected_or_harmless() {
        for i in 0..4 {
            for p in [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z] {
                let (out, _) = run_once(7, BackendKind::Dense, |c| c.injection = Some((i, p))).unwrap();
                if out.success {
                    assert!((out.joint_fidelity.unwrap() - 1.0).abs() < 1e-10, "{i} {p:?}");
                }
                assert_eq!(out.success, p == Pauli::I, "{i} {p:?}");
            }
        }
    }

    #[test]
    fn stabilizer_backend_agrees_on_the_verdict() {
        let (ok, _) = run_once(8, BackendKind::Stabilizer, |_| {}).unwrap();
        assert!(ok.success);
        let (bad, _) = run_once(8, BackendKind::Stabilizer, |c| c.injection = Some((1, Pauli::Z))).unwrap();
        assert!(!bad.success);
    }
}
