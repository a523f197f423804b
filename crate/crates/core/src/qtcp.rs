//! Connectionless two-way entanglement service: end nodes inject datagrams
//! under a per-flow window, interior nodes swap hop by hop without per-flow
//! state, and link controllers run entanglers on demand.
//!
//! Message fields (all integers):
//! - `Flow(src, dst, npairs, uuid)`
//! - `QDatagram(uuid, src, dst, correction, seq)`; correction bit 0 is an X
//!   frame, bit 1 a Z frame, both for the destination half
//! - `QDatagramSuccess(uuid, seq, delivered_at)`; the time is stored as the
//!   bit pattern of an f64
//! - `LinkLevelRequest(uuid, seq, next_hop)`
//! - `LinkLevelReply(uuid, seq, slot)` / `LinkLevelReplyAtHop(uuid, seq, slot)`
//! - `QDatagramSlot(uuid, seq)` on the source's half
//! - `ConsumeLog(uuid, seq, slot)` in the destination's own buffer

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use log::warn;

use crate::backends::{BackendKind, Gate};
use crate::engine::{Condition, ProcessId};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::net::{Net, RegRef, Target};
use crate::protocols::{EntanglerConfig, EntanglerOutcome, SlotFilter};
use crate::symbolics::SymState;
use crate::tag;
use crate::tagquery::{Pattern, Tag};
use crate::tags;
use crate::zoo::circuits::{self, CircuitResult};
use crate::zoo::states;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flow {
    pub src: usize,
    pub dst: usize,
    pub npairs: u64,
    pub uuid: u64,
}

impl Flow {
    pub fn new(src: usize, dst: usize, npairs: u64, uuid: u64) -> Result<Flow> {
        if src == dst {
            return Err(Error::Config(format!("flow {uuid} from node {src} to itself")));
        }
        if npairs == 0 {
            return Err(Error::Config(format!("flow {uuid} requests no pairs")));
        }
        Ok(Flow { src, dst, npairs, uuid })
    }

    pub fn to_tag(self) -> Tag {
        tag!(tags::FLOW, self.src, self.dst, self.npairs, self.uuid)
    }

    /// Hand the flow to the source's end-node controller.
    pub fn submit(self, net: &Net) -> Result<()> {
        net.put(self.src, self.to_tag(), self.src)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QDatagram {
    pub uuid: u64,
    pub src: usize,
    pub dst: usize,
    pub correction: u8,
    pub seq: u64,
}

impl QDatagram {
    pub fn to_tag(self) -> Tag {
        tag!(tags::QDATAGRAM, self.uuid, self.src, self.dst, self.correction as i64, self.seq)
    }

    pub fn from_tag(t: &Tag) -> Self {
        QDatagram {
            uuid: t.int(0) as u64,
            src: t.idx(1),
            dst: t.idx(2),
            correction: t.int(3) as u8,
            seq: t.int(4) as u64,
        }
    }
}

fn time_bits(t: f64) -> i64 {
    t.to_bits() as i64
}

fn bits_time(v: i64) -> f64 {
    f64::from_bits(v as u64)
}

/// Decides each flow's congestion window.
pub trait WindowPolicy {
    fn initial(&self, flow: &Flow) -> usize;
    /// New window after an acknowledgment.
    fn on_ack(&mut self, _flow: &Flow, window: usize, _latency: f64) -> usize {
        window
    }
}

/// Fixed window for every flow.
#[derive(Clone, Copy, Debug)]
pub struct StaticWindow(pub usize);

impl WindowPolicy for StaticWindow {
    fn initial(&self, _flow: &Flow) -> usize {
        self.0.max(1)
    }
}

struct FlowState {
    flow: Flow,
    window: usize,
    in_flight: usize,
    injected: u64,
    acked: u64,
    start: HashMap<u64, f64>,
}

pub fn spawn_end_node_controller(net: &Net, node: usize, policy: Box<dyn WindowPolicy>) -> Result<ProcessId> {
    if node >= net.num_nodes() {
        return Err(Error::NoSuchNode(node));
    }
    let n = net.clone();
    net.sim().spawn(async move { end_node_controller(n, node, policy).await })
}

pub async fn end_node_controller(net: Net, node: usize, mut policy: Box<dyn WindowPolicy>) -> Result<()> {
    let sim = net.sim().clone();
    let mb = Target::Buffer(node);
    let mut flows: BTreeMap<u64, FlowState> = BTreeMap::new();
    loop {
        while let Some(h) = net.querydelete(mb, &Pattern::new(tags::FLOW).eq(node)) {
            let t = h.tag;
            let flow = match Flow::new(t.idx(0), t.idx(1), t.int(2) as u64, t.int(3) as u64) {
                Ok(f) if !flows.contains_key(&f.uuid) => f,
                Ok(f) => {
                    warn!("duplicate flow uuid {}", f.uuid);
                    continue;
                }
                Err(e) => {
                    warn!("rejecting flow {t}: {e}");
                    continue;
                }
            };
            let window = policy.initial(&flow);
            flows.insert(flow.uuid, FlowState { flow, window, in_flight: 0, injected: 0, acked: 0, start: HashMap::new() });
        }

        while let Some(h) = net.querydelete(mb, &Pattern::new(tags::QDATAGRAM).any().any().eq(node)) {
            deliver(&net, node, QDatagram::from_tag(&h.tag))?;
        }

        while let Some(h) = net.querydelete(mb, &Pattern::new(tags::QDATAGRAM_SUCCESS)) {
            let (uuid, seq, delivered_at) = (h.tag.int(0) as u64, h.tag.int(1) as u64, bits_time(h.tag.int(2)));
            let Some(fs) = flows.get_mut(&uuid) else {
                warn!("ack for unknown flow {uuid} at node {node}");
                continue;
            };
            let Some(start) = fs.start.remove(&seq) else {
                warn!("duplicate ack {uuid}/{seq}");
                continue;
            };
            fs.in_flight -= 1;
            fs.acked += 1;
            let latency = delivered_at - start;
            let slot_pat = Pattern::new(tags::QDATAGRAM_SLOT).eq(uuid).eq(seq);
            if let Some(s) = net.query(Target::Register(node), &slot_pat) {
                net.traceout(RegRef::new(node, s.slot.expect("register hit has slot")))?;
            }
            net.record(
                MetricsRecord::new(sim.now(), "datagram-success")
                    .nodes(fs.flow.src, fs.flow.dst)
                    .flow(uuid, seq)
                    .latency(latency),
            );
            fs.window = policy.on_ack(&fs.flow, fs.window, latency).max(1);
            sim.trace_event("window", || format!("{uuid} {} {}", fs.in_flight, fs.window));
            if fs.acked == fs.flow.npairs {
                net.record(MetricsRecord::new(sim.now(), "flow-done").nodes(fs.flow.src, fs.flow.dst).flow(uuid, seq));
                flows.remove(&uuid);
            }
        }

        for fs in flows.values_mut() {
            while fs.in_flight < fs.window && fs.injected < fs.flow.npairs {
                let seq = fs.injected;
                fs.injected += 1;
                fs.in_flight += 1;
                fs.start.insert(seq, sim.now());
                let qd = QDatagram { uuid: fs.flow.uuid, src: node, dst: fs.flow.dst, correction: 0, seq };
                net.put(node, qd.to_tag(), node)?;
                sim.trace_event("window", || format!("{} {} {}", fs.flow.uuid, fs.in_flight, fs.window));
            }
        }

        sim.wait(net.onchange(mb)).await;
    }
}

/// Destination side: apply the frame, log, consume, acknowledge.
fn deliver(net: &Net, node: usize, qd: QDatagram) -> Result<()> {
    let sim = net.sim();
    let mb = Target::Buffer(node);
    let hop_pat = Pattern::new(tags::LINK_REPLY_AT_HOP).eq(qd.uuid).eq(qd.seq);
    let Some(h) = net.querydelete(mb, &hop_pat) else {
        warn!("datagram {}/{} reached {node} without its slot", qd.uuid, qd.seq);
        return Ok(());
    };
    let slot = RegRef::new(node, h.tag.idx(2));
    if qd.correction & 1 != 0 {
        net.apply_gate(Gate::X, &[slot])?;
    }
    if qd.correction & 2 != 0 {
        net.apply_gate(Gate::Z, &[slot])?;
    }
    let mut rec = MetricsRecord::new(sim.now(), "pair-delivered").nodes(qd.src, qd.dst).flow(qd.uuid, qd.seq);
    let src_pat = Pattern::new(tags::QDATAGRAM_SLOT).eq(qd.uuid).eq(qd.seq);
    if net.backend(node)? == BackendKind::Dense {
        if let Some(s) = net.query(Target::Register(qd.src), &src_pat) {
            let peer = RegRef::new(qd.src, s.slot.expect("register hit has slot"));
            rec = rec.fidelity(net.fidelity(&[peer, slot], &states::perfect_pair())?);
        }
    }
    net.record(rec);
    net.tag(mb, tag!(tags::CONSUME_LOG, qd.uuid, qd.seq, slot.slot))?;
    net.traceout(slot)?;
    let ack = tag!(tags::QDATAGRAM_SUCCESS, qd.uuid, qd.seq, time_bits(sim.now()));
    net.put(qd.src, ack, node)
}

/// Counters exposed by a network-node controller.
#[derive(Debug, Default)]
pub struct NodeStats {
    pub stored: Cell<usize>,
    pub swaps: Cell<u64>,
    pub orphans: Cell<u64>,
}

pub fn spawn_network_node_controller(net: &Net, node: usize) -> Result<(ProcessId, Rc<NodeStats>)> {
    if node >= net.num_nodes() {
        return Err(Error::NoSuchNode(node));
    }
    let stats = Rc::new(NodeStats::default());
    let (n, s) = (net.clone(), stats.clone());
    let pid = net.sim().spawn(async move { network_node_controller(n, node, s).await })?;
    Ok((pid, stats))
}

pub async fn network_node_controller(net: Net, node: usize, stats: Rc<NodeStats>) -> Result<()> {
    let sim = net.sim().clone();
    let mb = Target::Buffer(node);
    let mut waiting: HashMap<(u64, u64), QDatagram> = HashMap::new();
    loop {
        let foreign = Pattern::new(tags::QDATAGRAM).any().any().int(move |d| d != node as i64);
        while let Some(h) = net.querydelete(mb, &foreign) {
            let qd = QDatagram::from_tag(&h.tag);
            let Some(next) = net.next_hop(node, qd.dst) else {
                warn!("no quantum route from {node} to {}", qd.dst);
                continue;
            };
            waiting.insert((qd.uuid, qd.seq), qd);
            net.put(node, tag!(tags::LINK_REQUEST, qd.uuid, qd.seq, next), node)?;
        }

        for h in net.queryall(mb, &Pattern::new(tags::LINK_REPLY)) {
            let (uuid, seq, slot_a) = (h.tag.int(0) as u64, h.tag.int(1) as u64, h.tag.idx(2));
            let Some(&qd) = waiting.get(&(uuid, seq)) else {
                warn!("orphan-reply {uuid}/{seq} at node {node}");
                stats.orphans.set(stats.orphans.get() + 1);
                net.untag(mb, h.id);
                continue;
            };
            let a = RegRef::new(node, slot_a);
            let mut qd = qd;
            if node != qd.src {
                // the half carried so far sits in the slot named by the previous link
                let hop_pat = Pattern::new(tags::LINK_REPLY_AT_HOP).eq(uuid).eq(seq);
                let Some(hop) = net.querydelete(mb, &hop_pat) else { continue };
                let b = RegRef::new(node, hop.tag.idx(2));
                let CircuitResult::Bits(x, z) = circuits::local_entanglement_swap(&net, b, a)? else { unreachable!() };
                qd.correction ^= (x as u8) | ((z as u8) << 1);
                stats.swaps.set(stats.swaps.get() + 1);
                net.record(MetricsRecord::new(sim.now(), "swap").node(node).flow(uuid, seq));
            } else {
                net.tag(Target::Slot(a), tag!(tags::QDATAGRAM_SLOT, uuid, seq))?;
            }
            net.untag(mb, h.id);
            waiting.remove(&(uuid, seq));
            let next = net.next_hop(node, qd.dst).ok_or(Error::NotAdjacent(node, qd.dst))?;
            net.put(next, qd.to_tag(), node)?;
        }
        stats.stored.set(waiting.len());
        sim.wait(net.onchange(mb)).await;
    }
}

#[derive(Clone, Debug)]
pub struct LinkConfig {
    pub node_a: usize,
    pub node_b: usize,
    pub success_prob: f64,
    pub attempt_duration: f64,
    pub pairstate: SymState,
}

impl LinkConfig {
    pub fn new(node_a: usize, node_b: usize) -> Self {
        LinkConfig { node_a, node_b, success_prob: 1.0, attempt_duration: 1.0, pairstate: states::perfect_pair() }
    }
}

pub fn spawn_link_controller(net: &Net, cfg: LinkConfig) -> Result<ProcessId> {
    let mut e = EntanglerConfig::new(cfg.node_a, cfg.node_b);
    e.success_prob = cfg.success_prob;
    e.attempt_duration = cfg.attempt_duration;
    e.pairstate = cfg.pairstate.clone();
    e.validate(net)?;
    let n = net.clone();
    net.sim().spawn(async move { link_controller(n, cfg).await })
}

/// Serves link requests from either endpoint in arrival order, one at a time.
pub async fn link_controller(net: Net, cfg: LinkConfig) -> Result<()> {
    let sim = net.sim().clone();
    let (ma, mbuf) = (Target::Buffer(cfg.node_a), Target::Buffer(cfg.node_b));
    loop {
        let ra = net.query(ma, &Pattern::new(tags::LINK_REQUEST).any().any().eq(cfg.node_b));
        let rb = net.query(mbuf, &Pattern::new(tags::LINK_REQUEST).any().any().eq(cfg.node_a));
        let (req, requester, other, buf) = match (ra, rb) {
            (Some(a), Some(b)) if b.id < a.id => (b, cfg.node_b, cfg.node_a, mbuf),
            (Some(a), _) => (a, cfg.node_a, cfg.node_b, ma),
            (None, Some(b)) => (b, cfg.node_b, cfg.node_a, mbuf),
            (None, None) => {
                sim.wait(net.onchange(ma) | net.onchange(mbuf)).await;
                continue;
            }
        };
        net.untag(buf, req.id);
        let (uuid, seq) = (req.tag.int(0), req.tag.int(1));
        let mut e = EntanglerConfig::new(requester, other);
        e.success_prob = cfg.success_prob;
        e.attempt_duration = cfg.attempt_duration;
        e.pairstate = cfg.pairstate.clone();
        e.choose_a = SlotFilter::all();
        e.choose_b = SlotFilter::all();
        e.rounds = Some(1);
        e.tag = false;
        let pid = crate::protocols::spawn_entangler(&net, e)?;
        sim.wait(Condition::ProcessDone(pid)).await;
        let out = sim.output::<Result<EntanglerOutcome>>(pid).expect("entangler finished");
        let (a, b) = match out.as_ref() {
            Ok(o) => o.last.expect("one round made one pair"),
            Err(e) => return Err(e.clone()),
        };
        net.put(requester, tag!(tags::LINK_REPLY, uuid, seq, a.slot), requester)?;
        net.put(other, tag!(tags::LINK_REPLY_AT_HOP, uuid, seq, b.slot), requester)?;
    }
}

/// Start every controller: end-node controllers on `end_nodes`, a
/// network-node controller on every node, a link controller on every edge.
pub fn install(
    net: &Net,
    end_nodes: &[usize],
    window: impl Fn() -> Box<dyn WindowPolicy>,
    link: impl Fn(usize, usize) -> LinkConfig,
) -> Result<Vec<Rc<NodeStats>>> {
    for &n in end_nodes {
        spawn_end_node_controller(net, n, window())?;
    }
    let mut stats = Vec::new();
    for n in 0..net.num_nodes() {
        stats.push(spawn_network_node_controller(net, n)?.1);
    }
    for (a, b) in net.quantum_edges() {
        spawn_link_controller(net, link(a, b))?;
    }
    Ok(stats)
}
