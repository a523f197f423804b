//! Long-running protocol processes. They coordinate only through tags,
//! messages and slot locks.

use log::{debug, warn};
use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendKind, Gate};
use crate::engine::{Condition, ProcessId};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::net::{Net, RegRef, Target};
use crate::symbolics::SymState;
use crate::tagquery::{Pattern, Tag};
use crate::tags::{self, Update};
use crate::zoo::circuits::{self, CircuitResult};
use crate::zoo::states;

/// Which slots of a register a protocol may use.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotFilter {
    /// Half-open slot index range.
    #[serde(default)]
    pub range: Option<[usize; 2]>,
    /// Skip slots carrying a tag of this type.
    #[serde(default)]
    pub without_tag: Option<String>,
}

impl SlotFilter {
    pub fn all() -> Self {
        SlotFilter::default()
    }

    pub fn range(lo: usize, hi: usize) -> Self {
        SlotFilter { range: Some([lo, hi]), without_tag: None }
    }

    pub fn single(slot: usize) -> Self {
        SlotFilter::range(slot, slot + 1)
    }

    pub fn without(mut self, tag: &str) -> Self {
        self.without_tag = Some(tag.to_string());
        self
    }

    pub fn allows(&self, net: &Net, r: RegRef) -> bool {
        if let Some([lo, hi]) = self.range {
            if r.slot < lo || r.slot >= hi {
                return false;
            }
        }
        match &self.without_tag {
            Some(t) => net.query(Target::Slot(r), &Pattern::new(t)).is_none(),
            None => true,
        }
    }
}

/// Classifies partner nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodePred {
    Any,
    Eq(usize),
    Lt(usize),
    Gt(usize),
    OneOf(Vec<usize>),
}

impl NodePred {
    pub fn accepts(&self, n: usize) -> bool {
        match self {
            NodePred::Any => true,
            NodePred::Eq(m) => n == *m,
            NodePred::Lt(m) => n < *m,
            NodePred::Gt(m) => n > *m,
            NodePred::OneOf(v) => v.contains(&n),
        }
    }
}

/// The remote (node, slot) a slot's counterpart tag names.
pub fn partner(net: &Net, r: RegRef) -> Option<(usize, usize)> {
    net.query(Target::Slot(r), &tags::counterpart_pattern()).map(|h| (h.tag.idx(0), h.tag.idx(1)))
}

fn counterpart_exact(node: usize, slot: usize) -> Pattern {
    tags::counterpart_pattern().eq(node).eq(slot)
}

async fn lock_all(net: &Net, slots: &[RegRef]) {
    let mut conds: Vec<Condition> = slots.iter().map(|&r| net.lock(r)).collect();
    let c = if conds.len() == 1 { conds.pop().unwrap() } else { Condition::AllOf(conds) };
    net.sim().wait(c).await;
}

fn unlock_all(net: &Net, slots: &[RegRef]) -> Result<()> {
    for &r in slots {
        net.unlock(r)?;
    }
    Ok(())
}

fn bell_fidelity(net: &Net, a: RegRef, b: RegRef) -> Option<f64> {
    if net.backend(a.node).ok()? != BackendKind::Dense {
        return None;
    }
    net.fidelity(&[a, b], &states::perfect_pair()).ok()
}

// ---- entangler ----

#[derive(Clone, Debug)]
pub struct EntanglerConfig {
    pub node_a: usize,
    pub node_b: usize,
    pub pairstate: SymState,
    pub choose_a: SlotFilter,
    pub choose_b: SlotFilter,
    pub success_prob: f64,
    pub attempt_duration: f64,
    /// `None` runs forever.
    pub rounds: Option<u64>,
    pub tag: bool,
    /// The caller already holds the slot locks.
    pub assume_locked: bool,
}

impl EntanglerConfig {
    pub fn new(node_a: usize, node_b: usize) -> Self {
        EntanglerConfig {
            node_a,
            node_b,
            pairstate: states::perfect_pair_stabilizer(),
            choose_a: SlotFilter::all(),
            choose_b: SlotFilter::all(),
            success_prob: 1.0,
            attempt_duration: 1.0,
            rounds: None,
            tag: true,
            assume_locked: false,
        }
    }

    pub fn validate(&self, net: &Net) -> Result<()> {
        if !net.adjacent(self.node_a, self.node_b) {
            return Err(Error::NotAdjacent(self.node_a, self.node_b));
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            return Err(Error::Config(format!("success probability {} outside (0,1]", self.success_prob)));
        }
        if !(self.attempt_duration >= 0.0 && self.attempt_duration.is_finite()) {
            return Err(Error::Config(format!("attempt duration {}", self.attempt_duration)));
        }
        if self.pairstate.num_qubits() != 2 {
            return Err(Error::ArityMismatch { expected: 2, got: self.pairstate.num_qubits() });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntanglerOutcome {
    /// Slots of the last pair made.
    pub last: Option<(RegRef, RegRef)>,
    pub pairs: u64,
    pub attempts: u64,
}

fn free_slot(net: &Net, node: usize, filter: &SlotFilter, ignore_locks: bool) -> Option<RegRef> {
    (0..net.num_slots(node))
        .map(|s| RegRef::new(node, s))
        .find(|&r| !net.is_assigned(r) && (ignore_locks || !net.is_locked(r)) && filter.allows(net, r))
}

pub fn spawn_entangler(net: &Net, cfg: EntanglerConfig) -> Result<ProcessId> {
    cfg.validate(net)?;
    let n = net.clone();
    net.sim().spawn(async move { entangler(n, cfg).await })
}

pub async fn entangler(net: Net, cfg: EntanglerConfig) -> Result<EntanglerOutcome> {
    let sim = net.sim().clone();
    let mut out = EntanglerOutcome::default();
    loop {
        if cfg.rounds.is_some_and(|r| out.pairs >= r) {
            return Ok(out);
        }
        let a = free_slot(&net, cfg.node_a, &cfg.choose_a, cfg.assume_locked);
        let b = free_slot(&net, cfg.node_b, &cfg.choose_b, cfg.assume_locked);
        let (Some(a), Some(b)) = (a, b) else {
            sim.wait(net.onchange(Target::Register(cfg.node_a)) | net.onchange(Target::Register(cfg.node_b))).await;
            continue;
        };
        if !cfg.assume_locked {
            lock_all(&net, &[a, b]).await;
            if net.is_assigned(a) || net.is_assigned(b) {
                unlock_all(&net, &[a, b])?;
                continue;
            }
        }
        loop {
            sim.timeout(cfg.attempt_duration).await;
            out.attempts += 1;
            if sim.with_rng(|r| rand::Rng::random_bool(r, cfg.success_prob)) {
                break;
            }
        }
        net.initialize(&[a, b], &cfg.pairstate)?;
        if cfg.tag {
            net.tag(Target::Slot(a), tags::counterpart(b.node, b.slot))?;
            net.tag(Target::Slot(b), tags::counterpart(a.node, a.slot))?;
        }
        net.record(MetricsRecord::new(sim.now(), "entangled").nodes(a.node, b.node).detail(format!("{a} {b}")));
        if !cfg.assume_locked {
            unlock_all(&net, &[a, b])?;
        }
        out.pairs += 1;
        out.last = Some((a, b));
    }
}

// ---- swapper ----

#[derive(Clone, Debug)]
pub struct SwapperConfig {
    pub node: usize,
    pub node_l: NodePred,
    pub node_h: NodePred,
    pub chooseslots: SlotFilter,
    pub rounds: Option<u64>,
}

fn find_swappable(net: &Net, node: usize, pred: &NodePred, filter: &SlotFilter, not: Option<usize>) -> Option<RegRef> {
    net.queryall(Target::Register(node), &tags::counterpart_pattern())
        .into_iter()
        .filter_map(|h| {
            let r = RegRef::new(node, h.slot?);
            let ok = Some(r.slot) != not
                && pred.accepts(h.tag.idx(0))
                && h.tag.idx(0) != node
                && filter.allows(net, r)
                && !net.is_locked(r)
                && net.is_assigned(r);
            ok.then_some((h.time, h.id, r))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .map(|(_, _, r)| r)
}

pub fn spawn_swapper(net: &Net, cfg: SwapperConfig) -> Result<ProcessId> {
    let n = net.clone();
    net.sim().spawn(async move { swapper(n, cfg).await })
}

pub async fn swapper(net: Net, cfg: SwapperConfig) -> Result<u64> {
    let sim = net.sim().clone();
    let mut done = 0;
    loop {
        if cfg.rounds.is_some_and(|r| done >= r) {
            return Ok(done);
        }
        let a = find_swappable(&net, cfg.node, &cfg.node_l, &cfg.chooseslots, None);
        let b = a.and_then(|a| find_swappable(&net, cfg.node, &cfg.node_h, &cfg.chooseslots, Some(a.slot)));
        let (Some(a), Some(b)) = (a, b) else {
            sim.wait(net.onchange(Target::Register(cfg.node))).await;
            continue;
        };
        lock_all(&net, &[a, b]).await;
        let (pa, pb) = match (partner(&net, a), partner(&net, b)) {
            (Some(pa), Some(pb)) if net.is_assigned(a) && net.is_assigned(b) => (pa, pb),
            _ => {
                unlock_all(&net, &[a, b])?;
                continue;
            }
        };
        let CircuitResult::Bits(x, z) = circuits::local_entanglement_swap(&net, a, b)? else { unreachable!() };
        net.querydelete(Target::Slot(a), &counterpart_exact(pa.0, pa.1));
        net.querydelete(Target::Slot(b), &counterpart_exact(pb.0, pb.1));
        net.tag(Target::Slot(a), tags::history(pa.0, pa.1, pb.0, pb.1, b.slot))?;
        net.tag(Target::Slot(b), tags::history(pb.0, pb.1, pa.0, pa.1, a.slot))?;
        // a's partner gets the Z part, b's partner the X part
        let to_a = Update {
            past_remote_node: cfg.node,
            past_remote_slot: a.slot,
            local_slot: pa.1,
            new_remote_node: pb.0,
            new_remote_slot: pb.1,
            bit: z,
        };
        let to_b = Update {
            past_remote_node: cfg.node,
            past_remote_slot: b.slot,
            local_slot: pb.1,
            new_remote_node: pa.0,
            new_remote_slot: pa.1,
            bit: x,
        };
        net.put(pa.0, to_a.to_tag(tags::ENTANGLEMENT_UPDATE_Z), cfg.node)?;
        net.put(pb.0, to_b.to_tag(tags::ENTANGLEMENT_UPDATE_X), cfg.node)?;
        net.record(MetricsRecord::new(sim.now(), "swap").nodes(pa.0, pb.0).node(cfg.node).detail(format!("{}{}", x as u8, z as u8)));
        unlock_all(&net, &[a, b])?;
        done += 1;
    }
}

// ---- tracker ----

pub fn spawn_tracker(net: &Net, node: usize) -> Result<ProcessId> {
    let n = net.clone();
    net.sim().spawn(async move { tracker(n, node).await })
}

fn history_pattern(remote_node: usize, remote_slot: usize) -> Pattern {
    Pattern::new(tags::ENTANGLEMENT_HISTORY).eq(remote_node).eq(remote_slot)
}

/// Applies swap corrections and keeps counterpart tags pointing at the
/// current partner. Runs forever.
pub async fn tracker(net: Net, node: usize) -> Result<()> {
    let sim = net.sim().clone();
    let mb = Target::Buffer(node);
    let names = [tags::ENTANGLEMENT_UPDATE_X, tags::ENTANGLEMENT_UPDATE_Z, tags::ENTANGLEMENT_DELETE];
    loop {
        let hit = names.iter().find_map(|n| net.querydelete(mb, &Pattern::new(n)));
        let Some(hit) = hit else {
            sim.wait(net.onchange(mb)).await;
            continue;
        };
        let msg = hit.tag;
        if msg.name == tags::ENTANGLEMENT_DELETE {
            handle_delete(&net, node, &msg).await?;
        } else {
            handle_update(&net, node, &msg).await?;
        }
    }
}

async fn handle_update(net: &Net, node: usize, msg: &Tag) -> Result<()> {
    let u = Update::from_tag(msg);
    let r = RegRef::new(node, u.local_slot);
    if r.slot >= net.num_slots(node) {
        warn!("update for nonexistent slot {r}");
        return Ok(());
    }
    lock_all(net, &[r]).await;
    let result = apply_update(net, node, r, u, msg);
    net.unlock(r)?;
    result
}

fn apply_update(net: &Net, node: usize, r: RegRef, u: Update, msg: &Tag) -> Result<()> {
    let slot = Target::Slot(r);
    if net.querydelete(slot, &counterpart_exact(u.past_remote_node, u.past_remote_slot)).is_some() {
        if u.bit {
            let g = if msg.name == tags::ENTANGLEMENT_UPDATE_X { Gate::X } else { Gate::Z };
            net.apply_gate(g, &[r])?;
        }
        net.tag(slot, tags::counterpart(u.new_remote_node, u.new_remote_slot))?;
        net.sim().trace_event("retarget", || format!("{r} -> {}.{}", u.new_remote_node, u.new_remote_slot));
        return Ok(());
    }
    if let Some(h) = net.querydelete(slot, &history_pattern(u.past_remote_node, u.past_remote_slot)) {
        // this slot was swapped away; pass the update on to where its pair went
        let fwd = Update {
            past_remote_node: node,
            past_remote_slot: h.tag.idx(4),
            local_slot: h.tag.idx(3),
            new_remote_node: u.new_remote_node,
            new_remote_slot: u.new_remote_slot,
            bit: u.bit,
        };
        net.put(h.tag.idx(2), fwd.to_tag(&msg.name), node)?;
        return Ok(());
    }
    debug!("dropping stale update {msg} at node {node}");
    Ok(())
}

async fn handle_delete(net: &Net, node: usize, msg: &Tag) -> Result<()> {
    let (send_node, send_slot, slot) = (msg.idx(0), msg.idx(1), msg.idx(3));
    let r = RegRef::new(node, slot);
    if slot >= net.num_slots(node) {
        return Ok(());
    }
    lock_all(net, &[r]).await;
    let t = Target::Slot(r);
    if net.query(t, &counterpart_exact(send_node, send_slot)).is_some() {
        net.traceout(r)?;
        net.record(MetricsRecord::new(net.now(), "cutoff").nodes(node, send_node).detail(format!("{r} remote")));
    } else if let Some(h) = net.querydelete(t, &history_pattern(send_node, send_slot)) {
        net.put(h.tag.idx(2), tags::delete(node, h.tag.idx(4), h.tag.idx(2), h.tag.idx(3)), node)?;
    } else {
        debug!("dropping stale delete {msg} at node {node}");
    }
    net.unlock(r)
}

// ---- cutoff ----

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffConfig {
    pub node: usize,
    pub retention: f64,
    pub period: f64,
}

pub fn spawn_cutoff(net: &Net, cfg: CutoffConfig) -> Result<ProcessId> {
    if !(cfg.retention > 0.0 && cfg.period > 0.0) {
        return Err(Error::Config("cutoff retention and period must be positive".into()));
    }
    let n = net.clone();
    net.sim().spawn(async move { cutoff(n, cfg).await })
}

pub async fn cutoff(net: Net, cfg: CutoffConfig) -> Result<()> {
    let sim = net.sim().clone();
    loop {
        sim.timeout(cfg.period).await;
        let now = sim.now();
        let stale: Vec<_> = net
            .queryall(Target::Register(cfg.node), &tags::counterpart_pattern())
            .into_iter()
            .filter(|h| now - h.time > cfg.retention)
            .filter_map(|h| Some((RegRef::new(cfg.node, h.slot?), h.tag.idx(0), h.tag.idx(1))))
            .filter(|(r, _, _)| !net.is_locked(*r))
            .collect();
        for (r, rn, rs) in stale {
            lock_all(&net, &[r]).await;
            if partner(&net, r) == Some((rn, rs)) {
                net.traceout(r)?;
                net.put(rn, tags::delete(cfg.node, r.slot, rn, rs), cfg.node)?;
                net.record(MetricsRecord::new(sim.now(), "cutoff").nodes(cfg.node, rn).detail(r.to_string()));
            }
            net.unlock(r)?;
        }
    }
}

// ---- purification ----

#[derive(Clone, Debug)]
pub struct PurifierConfig {
    pub node_a: usize,
    pub node_b: usize,
    pub choose_a: SlotFilter,
    pub choose_b: SlotFilter,
    /// Tag put on both halves of a purified pair.
    pub tag: String,
    pub rounds: Option<u64>,
}

impl PurifierConfig {
    pub fn new(node_a: usize, node_b: usize) -> Self {
        PurifierConfig {
            node_a,
            node_b,
            choose_a: SlotFilter::all().without(tags::DISTILLED),
            choose_b: SlotFilter::all().without(tags::DISTILLED),
            tag: tags::DISTILLED.to_string(),
            rounds: None,
        }
    }
}

/// Complete A-B pairs usable by the purifier, oldest first.
fn purifiable_pairs(net: &Net, cfg: &PurifierConfig) -> Vec<(RegRef, RegRef)> {
    let pat = tags::counterpart_pattern().eq(cfg.node_b);
    net.queryall(Target::Register(cfg.node_a), &pat)
        .into_iter()
        .filter_map(|h| {
            let a = RegRef::new(cfg.node_a, h.slot?);
            let b = RegRef::new(cfg.node_b, h.tag.idx(1));
            let ok = net.is_assigned(a)
                && net.is_assigned(b)
                && !net.is_locked(a)
                && !net.is_locked(b)
                && cfg.choose_a.allows(net, a)
                && cfg.choose_b.allows(net, b)
                && partner(net, b) == Some((a.node, a.slot));
            ok.then_some((a, b))
        })
        .collect()
}

pub fn spawn_purifier(net: &Net, cfg: PurifierConfig) -> Result<ProcessId> {
    if cfg.node_a == cfg.node_b {
        return Err(Error::MismatchedPartners("purifier needs two distinct nodes".into()));
    }
    let n = net.clone();
    net.sim().spawn(async move { purifier(n, cfg).await })
}

/// Repeated 2-to-1 rounds between two nodes. The heralding bits travel over
/// the classical network before the outcome is acted on.
pub async fn purifier(net: Net, cfg: PurifierConfig) -> Result<(u64, u64)> {
    let sim = net.sim().clone();
    let (mut ok_count, mut fail_count) = (0, 0);
    loop {
        if cfg.rounds.is_some_and(|r| ok_count + fail_count >= r) {
            return Ok((ok_count, fail_count));
        }
        let pairs = purifiable_pairs(&net, &cfg);
        if pairs.len() < 2 {
            sim.wait(net.onchange(Target::Register(cfg.node_a)) | net.onchange(Target::Register(cfg.node_b))).await;
            continue;
        }
        let ((ka, kb), (sa, sb)) = (pairs[0], pairs[1]);
        let all = [ka, kb, sa, sb];
        lock_all(&net, &all).await;
        if partner(&net, ka) != Some((kb.node, kb.slot)) || partner(&net, sa) != Some((sb.node, sb.slot)) {
            unlock_all(&net, &all)?;
            continue;
        }
        let CircuitResult::Heralded(ok) = circuits::purify2to1(&net, ka, kb, sa, sb)? else { unreachable!() };
        let latency = net.classical_latency(cfg.node_a, cfg.node_b)?;
        sim.timeout(latency).await;
        net.traceout(sa)?;
        net.traceout(sb)?;
        let mut rec = MetricsRecord::new(sim.now(), "purify").nodes(ka.node, kb.node);
        if ok {
            net.tag(Target::Slot(ka), Tag::new(&cfg.tag, vec![kb.node.into(), kb.slot.into()]))?;
            net.tag(Target::Slot(kb), Tag::new(&cfg.tag, vec![ka.node.into(), ka.slot.into()]))?;
            if let Some(f) = bell_fidelity(&net, ka, kb) {
                rec = rec.fidelity(f);
            }
            ok_count += 1;
        } else {
            net.traceout(ka)?;
            net.traceout(kb)?;
            fail_count += 1;
        }
        net.record(rec.detail(if ok { "success" } else { "failure" }));
        unlock_all(&net, &all)?;
    }
}

// ---- graph states ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Network node holding each vertex.
    pub vertices: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub comm_slot: usize,
    pub storage_slot: usize,
    #[serde(default)]
    pub uuid: u64,
    #[serde(default = "one")]
    pub success_prob: f64,
    #[serde(default = "one")]
    pub attempt_duration: f64,
}

fn one() -> f64 {
    1.0
}

impl GraphSpec {
    pub fn validate(&self, net: &Net) -> Result<()> {
        let n = self.vertices.len();
        for (i, &v) in self.vertices.iter().enumerate() {
            if v >= net.num_nodes() {
                return Err(Error::NoSuchNode(v));
            }
            if self.vertices[..i].contains(&v) {
                return Err(Error::Config(format!("node {v} hosts two vertices")));
            }
        }
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(Error::Config(format!("bad graph edge ({a},{b})")));
            }
            let dup = self.edges[..i].iter().any(|&(c, d)| (c, d) == (a, b) || (c, d) == (b, a));
            if dup {
                return Err(Error::Config(format!("duplicate graph edge ({a},{b})")));
            }
            if !net.adjacent(self.vertices[a], self.vertices[b]) {
                return Err(Error::NotAdjacent(self.vertices[a], self.vertices[b]));
            }
        }
        Ok(())
    }
}

/// Vertex-disjoint edge set of maximum size among `edges` (indices into it).
pub fn matching_round(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut g = UnGraph::<(), usize>::with_capacity(n, edges.len());
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (i, &(a, b)) in edges.iter().enumerate() {
        g.add_edge(nodes[a], nodes[b], i);
    }
    let m = petgraph::algo::matching::maximum_matching(&g);
    let mut picked: Vec<usize> = m
        .edges()
        .map(|(a, b)| {
            let (a, b) = (a.index(), b.index());
            edges.iter().position(|&e| e == (a, b) || e == (b, a)).expect("matched edge exists")
        })
        .collect();
    picked.sort_unstable();
    picked
}

pub fn spawn_graph_state_constructor(net: &Net, spec: GraphSpec) -> Result<ProcessId> {
    spec.validate(net)?;
    let n = net.clone();
    net.sim().spawn(async move { graph_state_constructor(n, spec).await })
}

/// Builds the graph state on the storage slots. Returns the edges fused in
/// each round.
pub async fn graph_state_constructor(net: Net, spec: GraphSpec) -> Result<Vec<Vec<(usize, usize)>>> {
    spec.validate(&net)?;
    let sim = net.sim().clone();
    let mut slots = Vec::new();
    for &v in &spec.vertices {
        slots.push(RegRef::new(v, spec.comm_slot));
        slots.push(RegRef::new(v, spec.storage_slot));
    }
    lock_all(&net, &slots).await;
    for &v in &spec.vertices {
        let s = RegRef::new(v, spec.storage_slot);
        if !net.is_assigned(s) {
            net.initialize(&[s], &SymState::x1())?;
        }
    }
    let pair = SymState::stabilizer("ZX XZ")?;
    let mut remaining = spec.edges.clone();
    let mut rounds = Vec::new();
    while !remaining.is_empty() {
        let picked = matching_round(spec.vertices.len(), &remaining);
        let round: Vec<(usize, usize)> = picked.iter().map(|&i| remaining[i]).collect();
        let mut pids = Vec::new();
        for &(u, v) in &round {
            let mut cfg = EntanglerConfig::new(spec.vertices[u], spec.vertices[v]);
            cfg.pairstate = pair.clone();
            cfg.choose_a = SlotFilter::single(spec.comm_slot);
            cfg.choose_b = SlotFilter::single(spec.comm_slot);
            cfg.success_prob = spec.success_prob;
            cfg.attempt_duration = spec.attempt_duration;
            cfg.rounds = Some(1);
            cfg.tag = false;
            cfg.assume_locked = true;
            pids.push(spawn_entangler(&net, cfg)?);
        }
        sim.wait(Condition::AllOf(pids.iter().map(|&p| Condition::ProcessDone(p)).collect())).await;
        for &p in &pids {
            if let Some(out) = sim.output::<Result<EntanglerOutcome>>(p) {
                if let Err(e) = out.as_ref() {
                    return Err(e.clone());
                }
            }
        }
        for &(u, v) in &round {
            circuits::fusion(&net, spec.vertices[u], spec.vertices[v], spec.comm_slot, spec.storage_slot)?;
        }
        net.record(MetricsRecord::new(sim.now(), "fusion-round").detail(format!("{round:?}")));
        sim.trace_event("fusion-round", || format!("{round:?}"));
        for i in picked.into_iter().rev() {
            remaining.remove(i);
        }
        rounds.push(round);
    }
    unlock_all(&net, &slots)?;
    for (i, &v) in spec.vertices.iter().enumerate() {
        net.tag(Target::Slot(RegRef::new(v, spec.storage_slot)), tags::graph_state_storage(spec.uuid, i))?;
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BackendKind;
    use crate::engine::Sim;
    use crate::net::RegisterSpec;

    fn chain(n: usize, slots: usize, kind: BackendKind) -> (Sim, Net) {
        let sim = Sim::new(3);
        let net = Net::new(&sim, vec![RegisterSpec::new(slots); n], kind).unwrap();
        for i in 0..n - 1 {
            net.add_quantum_edge(i, i + 1).unwrap();
        }
        net.mirror_classical(0.1).unwrap();
        (sim, net)
    }

    #[test]
    fn one_round_entangler_tags_pair() {
        let (sim, net) = chain(2, 2, BackendKind::Dense);
        let mut cfg = EntanglerConfig::new(0, 1);
        cfg.rounds = Some(1);
        cfg.attempt_duration = 2.0;
        spawn_entangler(&net, cfg).unwrap();
        sim.run();
        assert_eq!(sim.now(), 2.0);
        assert_eq!(partner(&net, RegRef::new(0, 0)), Some((1, 0)));
        assert_eq!(partner(&net, RegRef::new(1, 0)), Some((0, 0)));
    }

    #[test]
    fn entangler_requires_adjacency() {
        let (_, net) = chain(3, 1, BackendKind::Dense);
        assert_eq!(spawn_entangler(&net, EntanglerConfig::new(0, 2)), Err(Error::NotAdjacent(0, 2)));
    }

    #[test]
    fn swap_and_track_retarget_tags() {
        let (sim, net) = chain(3, 2, BackendKind::Dense);
        for (a, b) in [(0, 1), (1, 2)] {
            let mut cfg = EntanglerConfig::new(a, b);
            cfg.rounds = Some(1);
            spawn_entangler(&net, cfg).unwrap();
        }
        for n in 0..3 {
            spawn_tracker(&net, n).unwrap();
        }
        let sw = SwapperConfig {
            node: 1,
            node_l: NodePred::Lt(1),
            node_h: NodePred::Gt(1),
            chooseslots: SlotFilter::all(),
            rounds: Some(1),
        };
        spawn_swapper(&net, sw).unwrap();
        sim.run_until(10.0);
        let (a, c) = (RegRef::new(0, 0), RegRef::new(2, 0));
        assert_eq!(partner(&net, a), Some((2, 0)));
        assert_eq!(partner(&net, c), Some((0, 0)));
        let f = net.fidelity(&[a, c], &states::perfect_pair()).unwrap();
        assert!((f - 1.0).abs() < 1e-10);
    }

    #[test]
    fn matching_of_square_takes_opposite_edges() {
        let edges = [(0, 1), (1, 2), (2, 3), (3, 0)];
        let m = matching_round(4, &edges);
        assert_eq!(m.len(), 2);
        let (a, b) = (edges[m[0]], edges[m[1]]);
        assert!(a.0 != b.0 && a.0 != b.1 && a.1 != b.0 && a.1 != b.1);
    }

    #[test]
    fn cutoff_clears_both_sides() {
        let (sim, net) = chain(2, 1, BackendKind::Dense);
        let mut cfg = EntanglerConfig::new(0, 1);
        cfg.rounds = Some(1);
        spawn_entangler(&net, cfg).unwrap();
        spawn_tracker(&net, 1).unwrap();
        spawn_cutoff(&net, CutoffConfig { node: 0, retention: 2.0, period: 1.0 }).unwrap();
        sim.run_until(3.5);
        assert!(net.is_assigned(RegRef::new(1, 0)));
        sim.run_until(4.5);
        assert!(!net.is_assigned(RegRef::new(0, 0)));
        assert!(!net.is_assigned(RegRef::new(1, 0)));
        assert!(partner(&net, RegRef::new(1, 0)).is_none());
    }
}
