//! Registers, the network graph, factored quantum state, tags and classical
//! messaging, bundled behind one cloneable handle.
//!
//! Slots hold at most one qubit. Qubits that have interacted share a
//! `StateRef`; everything else stays factored. Noise is applied lazily: each
//! slot keeps its own clock and is advanced only when an operation touches
//! it.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::{Rc, Weak};

use petgraph::graph::{NodeIndex, UnGraph};
use serde::{Deserialize, Serialize};

use crate::backends::{BackendKind, BackendState, Basis, Channel, DenseState, Gate, Outcome};
use crate::engine::{Condition, LockId, SignalId, Sim};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::pauli::{Pauli, PauliString};
use crate::symbolics::{SymOperator, SymState};
use crate::tagquery::{Pattern, SchemaRegistry, Tag, TagEntry, TagStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegRef {
    pub node: usize,
    pub slot: usize,
}

impl RegRef {
    pub fn new(node: usize, slot: usize) -> Self {
        RegRef { node, slot }
    }
}

impl fmt::Display for RegRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.node, self.slot)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "time", rename_all = "lowercase")]
pub enum NoiseProcess {
    #[default]
    None,
    T1(f64),
    T2(f64),
    Depolarization(f64),
}

impl NoiseProcess {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseProcess::None => Ok(()),
            NoiseProcess::T1(t) | NoiseProcess::T2(t) | NoiseProcess::Depolarization(t) => {
                if *t > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("noise time constant must be positive, got {t}")))
                }
            }
        }
    }

    /// The channel accumulated over `dt`.
    pub fn channel(&self, dt: f64) -> Option<Channel> {
        match self {
            NoiseProcess::None => None,
            NoiseProcess::T1(t1) => Some(Channel::AmplitudeDamp(-(-dt / t1).exp_m1())),
            NoiseProcess::T2(t2) => Some(Channel::Dephase(-(-dt / t2).exp_m1() / 2.0)),
            NoiseProcess::Depolarization(tau) => Some(Channel::Depolarize(-(-dt / tau).exp_m1())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegisterSpec {
    pub noise: Vec<NoiseProcess>,
    pub backend: Option<BackendKind>,
}

impl RegisterSpec {
    pub fn new(slots: usize) -> Self {
        RegisterSpec { noise: vec![NoiseProcess::None; slots], backend: None }
    }

    pub fn with_noise(slots: usize, noise: NoiseProcess) -> Self {
        RegisterSpec { noise: vec![noise; slots], backend: None }
    }

    pub fn backend(mut self, b: BackendKind) -> Self {
        self.backend = Some(b);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Forwarding {
    /// Route over shortest classical paths.
    #[default]
    Auto,
    /// Direct classical edges only.
    Off,
}

/// Something tags can be attached to or queried on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Slot(RegRef),
    /// All slots of a register, searched in slot order. Query-only.
    Register(usize),
    Buffer(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    /// Slot the entry lives on, for slot and register targets.
    pub slot: Option<usize>,
    pub id: u64,
    pub time: f64,
    pub tag: Tag,
}

impl Hit {
    fn from_entry(slot: Option<usize>, e: &TagEntry) -> Self {
        Hit { slot, id: e.id, time: e.time, tag: e.tag.clone() }
    }
}

struct Slot {
    noise: NoiseProcess,
    state: Option<u64>,
    clock: f64,
    lock: LockId,
    tags: TagStore,
    signal: SignalId,
}

struct Register {
    backend: BackendKind,
    slots: Vec<Slot>,
    signal: SignalId,
}

struct StateRef {
    state: BackendState,
    members: Vec<RegRef>,
}

struct Buffer {
    tags: TagStore,
    signal: SignalId,
}

/// Resource usage seen so far.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Audit {
    pub peak_stateref_qubits: usize,
    pub peak_total_bytes: usize,
    pub approximations: u64,
    pub messages_sent: u64,
}

struct NetState {
    registers: Vec<Register>,
    states: BTreeMap<u64, StateRef>,
    next_state: u64,
    quantum: Vec<Vec<usize>>,
    classical: UnGraph<(), f64>,
    buffers: Vec<Buffer>,
    schema: SchemaRegistry,
    next_tag: u64,
    in_flight: usize,
    forwarding: Forwarding,
    trace_hops: bool,
    route_cache: HashMap<usize, HashMap<NodeIndex, f64>>,
    audit: Audit,
    metrics: Vec<MetricsRecord>,
}

#[derive(Clone)]
pub struct Net {
    sim: Sim,
    inner: Rc<RefCell<NetState>>,
}

impl Net {
    pub fn new(sim: &Sim, registers: Vec<RegisterSpec>, default_backend: BackendKind) -> Result<Net> {
        let mut regs = Vec::new();
        let mut buffers = Vec::new();
        let mut classical = UnGraph::new_undirected();
        for spec in &registers {
            let mut slots = Vec::new();
            for noise in &spec.noise {
                noise.validate()?;
                slots.push(Slot {
                    noise: *noise,
                    state: None,
                    clock: sim.now(),
                    lock: sim.new_lock(),
                    tags: TagStore::default(),
                    signal: sim.new_signal(),
                });
            }
            regs.push(Register { backend: spec.backend.unwrap_or(default_backend), slots, signal: sim.new_signal() });
            buffers.push(Buffer { tags: TagStore::default(), signal: sim.new_signal() });
            classical.add_node(());
        }
        let n = regs.len();
        let st = NetState {
            registers: regs,
            states: BTreeMap::new(),
            next_state: 0,
            quantum: vec![Vec::new(); n],
            classical,
            buffers,
            schema: SchemaRegistry::standard(),
            next_tag: 0,
            in_flight: 0,
            forwarding: Forwarding::Auto,
            trace_hops: false,
            route_cache: HashMap::new(),
            audit: Audit::default(),
            metrics: Vec::new(),
        };
        Ok(Net { sim: sim.clone(), inner: Rc::new(RefCell::new(st)) })
    }

    fn st(&self) -> RefMut<'_, NetState> {
        self.inner.borrow_mut()
    }

    fn st_ref(&self) -> Ref<'_, NetState> {
        self.inner.borrow()
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn now(&self) -> f64 {
        self.sim.now()
    }

    // ---- topology ----

    pub fn num_nodes(&self) -> usize {
        self.st_ref().registers.len()
    }

    pub fn num_slots(&self, node: usize) -> usize {
        self.st_ref().registers.get(node).map_or(0, |r| r.slots.len())
    }

    pub fn backend(&self, node: usize) -> Result<BackendKind> {
        self.st_ref().registers.get(node).map(|r| r.backend).ok_or(Error::NoSuchNode(node))
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::NoSuchNode(node))
        }
    }

    fn check_slot(&self, r: RegRef) -> Result<()> {
        self.check_node(r.node)?;
        if r.slot < self.num_slots(r.node) {
            Ok(())
        } else {
            Err(Error::NoSuchSlot(r.to_string()))
        }
    }

    pub fn add_quantum_edge(&self, a: usize, b: usize) -> Result<()> {
        self.check_node(a)?;
        self.check_node(b)?;
        let mut st = self.st();
        for (u, v) in [(a, b), (b, a)] {
            if !st.quantum[u].contains(&v) {
                st.quantum[u].push(v);
                st.quantum[u].sort_unstable();
            }
        }
        Ok(())
    }

    pub fn add_classical_edge(&self, a: usize, b: usize, latency: f64) -> Result<()> {
        self.check_node(a)?;
        self.check_node(b)?;
        if !(latency >= 0.0 && latency.is_finite()) {
            return Err(Error::Config(format!("classical latency {latency} must be finite and non-negative")));
        }
        let mut st = self.st();
        st.classical.update_edge(NodeIndex::new(a), NodeIndex::new(b), latency);
        st.route_cache.clear();
        Ok(())
    }

    /// Classical edges mirroring every quantum edge with one latency.
    pub fn mirror_classical(&self, latency: f64) -> Result<()> {
        for (a, b) in self.quantum_edges() {
            self.add_classical_edge(a, b, latency)?;
        }
        Ok(())
    }

    pub fn set_forwarding(&self, f: Forwarding, trace_hops: bool) {
        let mut st = self.st();
        st.forwarding = f;
        st.trace_hops = trace_hops;
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.st_ref().quantum.get(node).cloned().unwrap_or_default()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.st_ref().quantum.get(a).is_some_and(|n| n.contains(&b))
    }

    pub fn quantum_edges(&self) -> Vec<(usize, usize)> {
        let st = self.st_ref();
        let mut out = Vec::new();
        for (u, ns) in st.quantum.iter().enumerate() {
            for &v in ns {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Next node on a shortest (hop-count) quantum path, lowest index on ties.
    pub fn next_hop(&self, from: usize, to: usize) -> Option<usize> {
        if from == to {
            return Some(to);
        }
        let st = self.st_ref();
        let n = st.quantum.len();
        let mut dist = vec![usize::MAX; n];
        let mut q = std::collections::VecDeque::new();
        dist[to] = 0;
        q.push_back(to);
        while let Some(u) = q.pop_front() {
            for &v in &st.quantum[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        if dist[from] == usize::MAX {
            return None;
        }
        st.quantum[from].iter().copied().filter(|&v| dist[v] + 1 == dist[from]).min()
    }

    // ---- slots and locks ----

    pub fn is_assigned(&self, r: RegRef) -> bool {
        self.st_ref().registers.get(r.node).and_then(|g| g.slots.get(r.slot)).is_some_and(|s| s.state.is_some())
    }

    pub fn lock_id(&self, r: RegRef) -> LockId {
        self.st_ref().registers[r.node].slots[r.slot].lock
    }

    pub fn is_locked(&self, r: RegRef) -> bool {
        self.sim.is_locked(self.lock_id(r))
    }

    pub fn lock(&self, r: RegRef) -> Condition {
        Condition::Lock(self.lock_id(r))
    }

    pub fn unlock(&self, r: RegRef) -> Result<()> {
        self.sim.release(self.lock_id(r))?;
        let sig = self.st_ref().registers[r.node].signal;
        self.sim.notify(sig);
        Ok(())
    }

    /// Identity of the joint state a slot belongs to.
    pub fn state_id(&self, r: RegRef) -> Option<u64> {
        self.st_ref().registers.get(r.node)?.slots.get(r.slot)?.state
    }

    /// All slots sharing `r`'s joint state, in state order.
    pub fn state_members(&self, r: RegRef) -> Vec<RegRef> {
        let st = self.st_ref();
        let Some(id) = st.registers[r.node].slots[r.slot].state else { return Vec::new() };
        st.states[&id].members.clone()
    }

    pub fn clock(&self, r: RegRef) -> f64 {
        self.st_ref().registers[r.node].slots[r.slot].clock
    }

    // ---- quantum operations ----

    pub fn initialize(&self, slots: &[RegRef], s: &SymState) -> Result<()> {
        for &r in slots {
            self.check_slot(r)?;
        }
        if s.num_qubits() != slots.len() {
            return Err(Error::ArityMismatch { expected: s.num_qubits(), got: slots.len() });
        }
        for (i, r) in slots.iter().enumerate() {
            if slots[..i].contains(r) {
                return Err(Error::SlotOccupied(format!("{r} listed twice")));
            }
        }
        let kind = self.common_backend(slots)?;
        let now = self.now();
        {
            let st = self.st_ref();
            for r in slots {
                if st.registers[r.node].slots[r.slot].state.is_some() {
                    return Err(Error::SlotOccupied(r.to_string()));
                }
            }
        }
        let state = self.sim.with_rng(|rng| s.express(kind, rng))?;
        let mut st = self.st();
        let id = st.next_state;
        st.next_state += 1;
        for r in slots {
            let slot = &mut st.registers[r.node].slots[r.slot];
            slot.state = Some(id);
            slot.clock = now;
        }
        st.states.insert(id, StateRef { state, members: slots.to_vec() });
        st.refresh_audit();
        let sigs: Vec<SignalId> = slots.iter().map(|r| st.registers[r.node].signal).collect();
        drop(st);
        for s in sigs {
            self.sim.notify(s);
        }
        self.sim.trace_event("init", || fmt_slots(slots).to_string());
        Ok(())
    }

    fn common_backend(&self, slots: &[RegRef]) -> Result<BackendKind> {
        let st = self.st_ref();
        let mut kind = None;
        for r in slots {
            let k = st.registers[r.node].backend;
            if kind.is_some_and(|x| x != k) {
                return Err(Error::BackendMismatch);
            }
            kind = Some(k);
        }
        kind.ok_or(Error::ArityMismatch { expected: 1, got: 0 })
    }

    /// Advance the listed slots' noise to now.
    pub fn uptotime(&self, slots: &[RegRef]) -> Result<()> {
        let now = self.now();
        let mut st = self.st();
        for r in slots {
            let slot = &st.registers[r.node].slots[r.slot];
            let (clock, noise, sid) = (slot.clock, slot.noise, slot.state);
            if now < clock {
                return Err(Error::ClockRegression { slot: clock, now });
            }
            let Some(sid) = sid else { continue };
            let dt = now - clock;
            if dt > 0.0 {
                if let Some(ch) = noise.channel(dt) {
                    let sref = st.states.get_mut(&sid).expect("slot state exists");
                    let pos = sref.members.iter().position(|m| m == r).expect("member");
                    let exact = self.sim.with_rng(|rng| sref.state.apply_channel(&ch, &[pos], rng))?;
                    if !exact {
                        st.audit.approximations += 1;
                        log::warn!("non-Pauli noise twirled on stabilizer backend at {r}");
                    }
                }
            }
            st.registers[r.node].slots[r.slot].clock = now;
        }
        Ok(())
    }

    /// Merge the states of `slots` into one, returning its id and the
    /// positions of the slots inside it.
    fn gather(&self, slots: &[RegRef]) -> Result<(u64, Vec<usize>)> {
        let mut st = self.st();
        let mut ids: Vec<u64> = Vec::new();
        for r in slots {
            let Some(id) = st.registers[r.node].slots[r.slot].state else {
                return Err(Error::SlotEmpty(r.to_string()));
            };
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let first = ids[0];
        for &other in &ids[1..] {
            let b = st.states.remove(&other).expect("state exists");
            let a = st.states.get_mut(&first).expect("state exists");
            a.state = a.state.compose(&b.state)?;
            a.members.extend(b.members.iter().copied());
            for m in &b.members {
                st.registers[m.node].slots[m.slot].state = Some(first);
            }
        }
        if ids.len() > 1 {
            st.refresh_audit();
        }
        let members = &st.states[&first].members;
        let pos = slots.iter().map(|r| members.iter().position(|m| m == r).expect("member")).collect();
        Ok((first, pos))
    }

    pub fn apply(&self, slots: &[RegRef], op: &SymOperator) -> Result<()> {
        if op.arity() != slots.len() {
            return Err(Error::ArityMismatch { expected: op.arity(), got: slots.len() });
        }
        let seq = op.gate_sequence()?;
        self.check_apply(slots)?;
        self.uptotime(slots)?;
        let (id, pos) = self.gather(slots)?;
        let mut st = self.st();
        let sref = st.states.get_mut(&id).expect("state");
        for (g, local) in seq {
            let targets: Vec<usize> = local.iter().map(|&i| pos[i]).collect();
            sref.state.apply_gate(g, &targets)?;
        }
        drop(st);
        self.sim.trace_event("apply", || format!("{op:?} on {}", fmt_slots(slots)));
        Ok(())
    }

    fn check_apply(&self, slots: &[RegRef]) -> Result<()> {
        for (i, &r) in slots.iter().enumerate() {
            self.check_slot(r)?;
            if slots[..i].contains(&r) {
                return Err(Error::DimMismatch(format!("slot {r} used twice")));
            }
            if !self.is_assigned(r) {
                return Err(Error::SlotEmpty(r.to_string()));
            }
        }
        self.common_backend(slots).map(|_| ())
    }

    pub fn apply_gate(&self, gate: Gate, slots: &[RegRef]) -> Result<()> {
        self.apply(slots, &SymOperator::Gate(gate))
    }

    pub fn apply_pauli(&self, r: RegRef, p: Pauli) -> Result<()> {
        if p == Pauli::I {
            return Ok(());
        }
        self.apply(&[r], &SymOperator::Pauli(PauliString::from_paulis(&[p])))
    }

    /// Apply a channel (e.g. injected noise) to slots.
    pub fn apply_channel(&self, slots: &[RegRef], ch: &Channel) -> Result<()> {
        self.check_apply(slots)?;
        self.uptotime(slots)?;
        let (id, pos) = self.gather(slots)?;
        let mut st = self.st();
        let sref = st.states.get_mut(&id).expect("state");
        let exact = self.sim.with_rng(|rng| sref.state.apply_channel(ch, &pos, rng))?;
        if !exact {
            st.audit.approximations += 1;
        }
        Ok(())
    }

    /// Measure without removing the qubit.
    pub fn measure(&self, r: RegRef, basis: Basis) -> Result<Outcome> {
        self.check_apply(&[r])?;
        self.uptotime(&[r])?;
        let mut st = self.st();
        let id = st.registers[r.node].slots[r.slot].state.expect("checked");
        let sref = st.states.get_mut(&id).expect("state");
        let pos = sref.members.iter().position(|m| *m == r).expect("member");
        let (o, _) = self.sim.with_rng(|rng| sref.state.measure(pos, basis, rng))?;
        drop(st);
        self.sim.trace_event("measure", || format!("{r} {basis:?} -> {}", o.index()));
        Ok(o)
    }

    /// Measure in `basis`, then remove the qubit; the slot becomes empty.
    pub fn project_traceout(&self, r: RegRef, basis: Basis) -> Result<Outcome> {
        let o = self.measure(r, basis)?;
        let mut st = self.st();
        let id = st.registers[r.node].slots[r.slot].state.expect("measured slot is assigned");
        let sref = st.states.get_mut(&id).expect("state");
        let pos = sref.members.iter().position(|m| *m == r).expect("member");
        sref.state.remove_eigen_qubit(pos, basis, o)?;
        sref.members.remove(pos);
        if sref.members.is_empty() {
            st.states.remove(&id);
        }
        st.registers[r.node].slots[r.slot].state = None;
        let sig = st.registers[r.node].signal;
        drop(st);
        self.sim.notify(sig);
        Ok(o)
    }

    /// Discard the qubit in `r` and every tag on the slot. No-op on an empty,
    /// untagged slot.
    pub fn traceout(&self, r: RegRef) -> Result<()> {
        self.check_slot(r)?;
        let removed_tags = {
            let mut st = self.st();
            st.registers[r.node].slots[r.slot].tags.clear()
        };
        if self.is_assigned(r) {
            let mut st = self.st();
            let id = st.registers[r.node].slots[r.slot].state.expect("assigned");
            let sref = st.states.get_mut(&id).expect("state");
            let pos = sref.members.iter().position(|m| *m == r).expect("member");
            if sref.members.len() == 1 {
                st.states.remove(&id);
            } else {
                self.sim.with_rng(|rng| sref.state.trace_out(pos, rng))?;
                sref.members.remove(pos);
            }
            st.registers[r.node].slots[r.slot].state = None;
        } else if removed_tags.is_empty() {
            return Ok(());
        }
        let (s1, s2) = {
            let st = self.st_ref();
            (st.registers[r.node].signal, st.registers[r.node].slots[r.slot].signal)
        };
        self.sim.notify(s1);
        self.sim.notify(s2);
        self.sim.trace_event("traceout", || r.to_string());
        Ok(())
    }

    /// Reduced dense state of `slots` (in the given order), after advancing
    /// their noise. Stabilizer states are lifted to dense first.
    pub fn reduced_state(&self, slots: &[RegRef]) -> Result<DenseState> {
        self.check_apply(slots)?;
        self.uptotime(slots)?;
        let st = self.st_ref();
        let mut acc: Option<DenseState> = None;
        let mut order: Vec<RegRef> = Vec::new();
        let mut seen: Vec<u64> = Vec::new();
        for r in slots {
            let id = st.registers[r.node].slots[r.slot].state.expect("checked");
            if seen.contains(&id) {
                continue;
            }
            seen.push(id);
            let sref = &st.states[&id];
            let keep_refs: Vec<RegRef> = slots.iter().copied().filter(|s| sref.members.contains(s)).collect();
            let keep: Vec<usize> =
                keep_refs.iter().map(|s| sref.members.iter().position(|m| m == s).expect("member")).collect();
            let dense = sref.state.to_dense();
            let part = if keep.len() == sref.members.len() && keep.iter().enumerate().all(|(i, &k)| i == k) {
                dense
            } else {
                dense.partial_trace(&keep)?
            };
            order.extend(keep_refs);
            acc = Some(match acc {
                None => part,
                Some(a) => a.compose(&part),
            });
        }
        let acc = acc.expect("at least one slot");
        if order == slots {
            return Ok(acc);
        }
        let perm: Vec<usize> = slots.iter().map(|s| order.iter().position(|o| o == s).expect("present")).collect();
        acc.partial_trace(&perm)
    }

    /// `<psi|rho|psi>` of the slots' reduced state against a pure target.
    pub fn fidelity(&self, slots: &[RegRef], target: &SymState) -> Result<f64> {
        let rho = self.reduced_state(slots)?;
        rho.fidelity_with_ket(&target.ket_vector()?)
    }

    pub fn expectation(&self, slots: &[RegRef], p: &PauliString) -> Result<f64> {
        if p.len() != slots.len() {
            return Err(Error::ArityMismatch { expected: slots.len(), got: p.len() });
        }
        self.check_apply(slots)?;
        self.uptotime(slots)?;
        let (id, pos) = self.gather(slots)?;
        let st = self.st_ref();
        let sref = &st.states[&id];
        Ok(sref.state.expectation(&p.embed(sref.members.len(), &pos)))
    }

    /// Direct access for diagnostics and tests.
    pub fn with_state<R>(&self, r: RegRef, f: impl FnOnce(&BackendState, &[RegRef]) -> R) -> Option<R> {
        let st = self.st_ref();
        let id = st.registers[r.node].slots[r.slot].state?;
        let s = &st.states[&id];
        Some(f(&s.state, &s.members))
    }

    pub fn audit(&self) -> Audit {
        self.st_ref().audit
    }

    pub fn num_staterefs(&self) -> usize {
        self.st_ref().states.len()
    }

    /// Current (qubits, bytes) of the largest state and the total.
    pub fn state_sizes(&self) -> (usize, usize) {
        let st = self.st_ref();
        let peak = st.states.values().map(|s| s.members.len()).max().unwrap_or(0);
        let bytes = st.states.values().map(|s| s.state.memory_bytes()).sum();
        (peak, bytes)
    }

    /// Check that slots and joint states reference each other consistently.
    pub fn check_bijection(&self) -> Result<()> {
        let st = self.st_ref();
        for (id, s) in &st.states {
            if s.members.len() != s.state.num_qubits() {
                return Err(Error::InvariantBreach(format!("state {id}: member count != qubit count")));
            }
            for (i, m) in s.members.iter().enumerate() {
                if s.members[..i].contains(m) {
                    return Err(Error::InvariantBreach(format!("state {id}: duplicate member {m}")));
                }
                if st.registers[m.node].slots[m.slot].state != Some(*id) {
                    return Err(Error::InvariantBreach(format!("slot {m} does not point back to state {id}")));
                }
            }
        }
        for (n, reg) in st.registers.iter().enumerate() {
            for (i, slot) in reg.slots.iter().enumerate() {
                if let Some(id) = slot.state {
                    let ok = st.states.get(&id).is_some_and(|s| s.members.contains(&RegRef::new(n, i)));
                    if !ok {
                        return Err(Error::InvariantBreach(format!("slot {n}.{i} points at a state without it")));
                    }
                }
            }
        }
        Ok(())
    }

    // ---- tags ----

    fn target_signals(&self, t: Target) -> Vec<SignalId> {
        let st = self.st_ref();
        match t {
            Target::Slot(r) => vec![st.registers[r.node].slots[r.slot].signal, st.registers[r.node].signal],
            Target::Register(n) => vec![st.registers[n].signal],
            Target::Buffer(n) => vec![st.buffers[n].signal],
        }
    }

    fn check_target(&self, t: Target) -> Result<()> {
        match t {
            Target::Slot(r) => self.check_slot(r),
            Target::Register(n) | Target::Buffer(n) => self.check_node(n),
        }
    }

    pub fn tag(&self, t: Target, tag: Tag) -> Result<u64> {
        self.check_target(t)?;
        let now = self.now();
        let id = {
            let mut st = self.st();
            st.schema.check(&tag)?;
            let id = st.next_tag;
            st.next_tag += 1;
            match t {
                Target::Slot(r) => st.registers[r.node].slots[r.slot].tags.push(id, now, tag.clone()),
                Target::Buffer(n) => st.buffers[n].tags.push(id, now, tag.clone()),
                Target::Register(n) => return Err(Error::NotTaggable(format!("register {n}; tag a slot instead"))),
            }
            id
        };
        for s in self.target_signals(t) {
            self.sim.notify(s);
        }
        self.sim.trace_event("tag", || format!("{t:?} {tag} #{id}"));
        Ok(id)
    }

    pub fn untag(&self, t: Target, id: u64) -> Option<TagEntry> {
        self.check_target(t).ok()?;
        let e = {
            let mut st = self.st();
            match t {
                Target::Slot(r) => st.registers[r.node].slots[r.slot].tags.remove(id),
                Target::Buffer(n) => st.buffers[n].tags.remove(id),
                Target::Register(n) => st.registers[n].slots.iter_mut().find_map(|s| s.tags.remove(id)),
            }
        };
        if e.is_some() {
            for s in self.target_signals(t) {
                self.sim.notify(s);
            }
            self.sim.trace_event("untag", || format!("{t:?} #{id}"));
        }
        e
    }

    pub fn query(&self, t: Target, p: &Pattern) -> Option<Hit> {
        let st = self.st_ref();
        query_in(&st, t, p)
    }

    pub fn queryall(&self, t: Target, p: &Pattern) -> Vec<Hit> {
        let st = self.st_ref();
        match t {
            Target::Slot(r) => st
                .registers
                .get(r.node)
                .and_then(|g| g.slots.get(r.slot))
                .map(|s| s.tags.queryall(p).into_iter().map(|e| Hit::from_entry(Some(r.slot), e)).collect())
                .unwrap_or_default(),
            Target::Register(n) => st
                .registers
                .get(n)
                .map(|g| {
                    g.slots
                        .iter()
                        .enumerate()
                        .flat_map(|(i, s)| s.tags.queryall(p).into_iter().map(move |e| Hit::from_entry(Some(i), e)))
                        .collect()
                })
                .unwrap_or_default(),
            Target::Buffer(n) => st
                .buffers
                .get(n)
                .map(|b| b.tags.queryall(p).into_iter().map(|e| Hit::from_entry(None, e)).collect())
                .unwrap_or_default(),
        }
    }

    pub fn querydelete(&self, t: Target, p: &Pattern) -> Option<Hit> {
        let hit = self.query(t, p)?;
        let t2 = match (t, hit.slot) {
            (Target::Register(n), Some(s)) => Target::Slot(RegRef::new(n, s)),
            _ => t,
        };
        self.untag(t2, hit.id);
        Some(hit)
    }

    /// All tag entries on a slot.
    pub fn slot_tags(&self, r: RegRef) -> Vec<TagEntry> {
        self.st_ref().registers[r.node].slots[r.slot].tags.entries().to_vec()
    }

    pub fn buffer_len(&self, node: usize) -> usize {
        self.st_ref().buffers[node].tags.len()
    }

    /// Fires at the next change to `t`.
    pub fn onchange(&self, t: Target) -> Condition {
        let sig = match t {
            Target::Slot(r) => self.st_ref().registers[r.node].slots[r.slot].signal,
            Target::Register(n) => self.st_ref().registers[n].signal,
            Target::Buffer(n) => self.st_ref().buffers[n].signal,
        };
        Condition::Changed(sig)
    }

    /// Fires once a tag matching `p` exists on `t`.
    pub fn querywait(&self, t: Target, p: Pattern) -> Condition {
        let Condition::Changed(sig) = self.onchange(t) else { unreachable!() };
        let weak: Weak<RefCell<NetState>> = Rc::downgrade(&self.inner);
        Condition::query(sig, move || weak.upgrade().is_some_and(|st| query_in(&st.borrow(), t, &p).is_some()))
    }

    // ---- messaging ----

    /// Delivery delay of a message from `src` to `dst`.
    pub fn classical_latency(&self, src: usize, dst: usize) -> Result<f64> {
        self.check_node(src)?;
        self.check_node(dst)?;
        self.route_latency(src, dst)
    }

    fn route_latency(&self, src: usize, dst: usize) -> Result<f64> {
        if src == dst {
            return Ok(0.0);
        }
        let mut st = self.st();
        if st.forwarding == Forwarding::Off {
            let e = st.classical.find_edge(NodeIndex::new(src), NodeIndex::new(dst));
            return e.map(|e| st.classical[e]).ok_or(Error::NoClassicalRoute { from: src, to: dst });
        }
        if !st.route_cache.contains_key(&src) {
            let d = petgraph::algo::dijkstra(&st.classical, NodeIndex::new(src), None, |e| *e.weight());
            st.route_cache.insert(src, d.into_iter().collect());
        }
        st.route_cache[&src].get(&NodeIndex::new(dst)).copied().ok_or(Error::NoClassicalRoute { from: src, to: dst })
    }

    fn route_path(&self, src: usize, dst: usize) -> Vec<(usize, f64)> {
        let st = self.st_ref();
        let g = &st.classical;
        let res = petgraph::algo::astar(g, NodeIndex::new(src), |n| n == NodeIndex::new(dst), |e| *e.weight(), |_| 0.0);
        let Some((_, path)) = res else { return Vec::new() };
        let mut out = Vec::new();
        let mut t = 0.0;
        for w in path.windows(2) {
            let e = g.find_edge(w[0], w[1]).expect("path edge");
            t += g[e];
            out.push((w[1].index(), t));
        }
        out
    }

    /// Send `tag` from `src` to `dst`'s message buffer.
    pub fn put(&self, dst: usize, tag: Tag, src: usize) -> Result<()> {
        self.check_node(dst)?;
        self.check_node(src)?;
        self.st().schema.check(&tag)?;
        let latency = self.route_latency(src, dst)?;
        let trace_hops = self.st_ref().trace_hops;
        {
            let mut st = self.st();
            st.in_flight += 1;
            st.audit.messages_sent += 1;
        }
        self.sim.trace_event("put", || format!("{src}->{dst} {tag} +{latency}"));
        if trace_hops && src != dst {
            let hops = self.route_path(src, dst);
            for (node, t) in hops.into_iter().filter(|(n, _)| *n != dst) {
                let sim = self.sim.clone();
                let label = tag.name.clone();
                self.sim.schedule(t, move || sim.trace_event("hop", || format!("{node} {label}")));
            }
        }
        let net = self.clone();
        self.sim.schedule(latency, move || net.deliver(dst, tag));
        Ok(())
    }

    fn deliver(&self, dst: usize, tag: Tag) {
        {
            let mut st = self.st();
            st.in_flight -= 1;
            let id = st.next_tag;
            st.next_tag += 1;
            let now = self.sim.now();
            st.buffers[dst].tags.push(id, now, tag.clone());
        }
        self.sim.trace_event("deliver", || format!("{dst} {tag}"));
        let sig = self.st_ref().buffers[dst].signal;
        self.sim.notify(sig);
    }

    pub fn messages_in_flight(&self) -> usize {
        self.st_ref().in_flight
    }

    // ---- metrics ----

    pub fn record(&self, r: MetricsRecord) {
        self.st().metrics.push(r);
    }

    pub fn metrics(&self) -> Vec<MetricsRecord> {
        self.st_ref().metrics.clone()
    }
}

fn query_in(st: &NetState, t: Target, p: &Pattern) -> Option<Hit> {
    match t {
        Target::Slot(r) => {
            let s = st.registers.get(r.node)?.slots.get(r.slot)?;
            s.tags.query(p).map(|e| Hit::from_entry(Some(r.slot), e))
        }
        Target::Register(n) => st
            .registers
            .get(n)?
            .slots
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.tags.query(p).map(|e| Hit::from_entry(Some(i), e))),
        Target::Buffer(n) => st.buffers.get(n)?.tags.query(p).map(|e| Hit::from_entry(None, e)),
    }
}

impl NetState {
    fn refresh_audit(&mut self) {
        let peak = self.states.values().map(|s| s.members.len()).max().unwrap_or(0);
        let bytes: usize = self.states.values().map(|s| s.state.memory_bytes()).sum();
        self.audit.peak_stateref_qubits = self.audit.peak_stateref_qubits.max(peak);
        self.audit.peak_total_bytes = self.audit.peak_total_bytes.max(bytes);
    }
}

fn fmt_slots(slots: &[RegRef]) -> String {
    let parts: Vec<String> = slots.iter().map(|r| r.to_string()).collect();
    parts.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag;
    use crate::zoo::states::perfect_pair;

    fn net(n: usize, slots: usize, kind: BackendKind) -> (Sim, Net) {
        let sim = Sim::new(7);
        let net = Net::new(&sim, vec![RegisterSpec::new(slots); n], kind).unwrap();
        for i in 0..n.saturating_sub(1) {
            net.add_quantum_edge(i, i + 1).unwrap();
        }
        net.mirror_classical(0.5).unwrap();
        (sim, net)
    }

    #[test]
    fn initialize_errors() {
        let (_, net) = net(2, 2, BackendKind::Dense);
        let a = RegRef::new(0, 0);
        net.initialize(&[a], &SymState::x1()).unwrap();
        assert!(matches!(net.initialize(&[a], &SymState::x1()), Err(Error::SlotOccupied(_))));
        assert!(matches!(
            net.initialize(&[RegRef::new(1, 0)], &perfect_pair()),
            Err(Error::ArityMismatch { .. })
        ));
    }

    #[test]
    fn cnot_composes_staterefs() {
        let (_, net) = net(2, 1, BackendKind::Stabilizer);
        let (a, b) = (RegRef::new(0, 0), RegRef::new(1, 0));
        net.initialize(&[a], &SymState::x1()).unwrap();
        net.initialize(&[b], &SymState::z1()).unwrap();
        assert_eq!(net.num_staterefs(), 2);
        net.apply_gate(Gate::CNOT, &[a, b]).unwrap();
        assert_eq!(net.num_staterefs(), 1);
        assert!((net.fidelity(&[a, b], &perfect_pair()).unwrap() - 1.0).abs() < 1e-12);
        net.check_bijection().unwrap();
    }

    #[test]
    fn t1_decay_of_excited_state() {
        let sim = Sim::new(1);
        let net = Net::new(&sim, vec![RegisterSpec::with_noise(1, NoiseProcess::T1(1.0))], BackendKind::Dense).unwrap();
        let r = RegRef::new(0, 0);
        net.initialize(&[r], &SymState::z2()).unwrap();
        sim.run_until(1.0);
        let rho = net.reduced_state(&[r]).unwrap();
        let p1 = rho.probability(0, Basis::Z, Outcome::Minus).unwrap();
        assert!((p1 - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn traceout_is_idempotent_and_leaves_partner_mixed() {
        let (_, net) = net(2, 1, BackendKind::Dense);
        let (a, b) = (RegRef::new(0, 0), RegRef::new(1, 0));
        net.initialize(&[a, b], &perfect_pair()).unwrap();
        net.tag(Target::Slot(a), crate::tags::counterpart(1, 0)).unwrap();
        net.traceout(a).unwrap();
        net.traceout(a).unwrap();
        assert!(net.slot_tags(a).is_empty());
        let rho = net.reduced_state(&[b]).unwrap();
        assert!(rho.trace_distance(&DenseState::maximally_mixed(1)).unwrap() < 1e-12);
    }

    #[test]
    fn message_latency_is_path_sum() {
        let (sim, net) = net(3, 1, BackendKind::Dense);
        net.put(2, tag!("ping", 1), 0).unwrap();
        net.put(0, tag!("ping", 2), 0).unwrap();
        let t = sim.now();
        sim.run_until(0.99);
        assert_eq!(net.buffer_len(2), 0);
        assert_eq!(net.buffer_len(0), 1);
        sim.run_until(1.0);
        assert_eq!(net.buffer_len(2), 1);
        assert_eq!(t, 0.0);
        assert_eq!(net.messages_in_flight(), 0);
    }

    #[test]
    fn unreachable_destination() {
        let sim = Sim::new(0);
        let net = Net::new(&sim, vec![RegisterSpec::new(1); 2], BackendKind::Dense).unwrap();
        assert_eq!(net.put(1, tag!("x"), 0), Err(Error::NoClassicalRoute { from: 0, to: 1 }));
        assert_eq!(net.put(5, tag!("x"), 0), Err(Error::NoSuchNode(5)));
    }

    #[test]
    fn register_query_returns_slot() {
        let (_, net) = net(1, 3, BackendKind::Dense);
        net.tag(Target::Slot(RegRef::new(0, 2)), crate::tags::counterpart(4, 1)).unwrap();
        let hit = net.query(Target::Register(0), &crate::tags::counterpart_pattern().eq(4usize)).unwrap();
        assert_eq!(hit.slot, Some(2));
        assert!(net.querydelete(Target::Register(0), &crate::tags::counterpart_pattern()).is_some());
        assert!(net.query(Target::Register(0), &crate::tags::counterpart_pattern()).is_none());
    }
}
