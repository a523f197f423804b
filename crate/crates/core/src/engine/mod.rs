//! Deterministic discrete-event engine.
//!
//! Processes are ordinary Rust futures. A process suspends by awaiting
//! [`Sim::wait`] on a [`Condition`]; the engine resumes it once the condition
//! is satisfied. Everything runs on one thread and events at equal timestamps
//! are ordered by insertion, so a run is a pure function of its seed.

mod condition;
mod trace;

pub use condition::{Condition, Wake};
pub use trace::{Trace, TraceLevel, TraceRecord};

use std::any::Any;
use std::cell::{RefCell, RefMut};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type SimTime = f64;
/// Type-erased return value of a process.
pub type Output = Rc<dyn Any>;
type BoxFuture = Pin<Box<dyn Future<Output = Output>>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProcessId(pub u64);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LockId(pub usize);
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignalId(pub usize);

type NodeId = u64;

enum EventKind {
    Start(ProcessId),
    Fire(NodeId, Wake),
    Probe(NodeId),
    Callback(Box<dyn FnOnce()>),
}

struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

enum NodeKind {
    Timer,
    Lock(LockId),
    Signal(SignalId),
    Query(SignalId, Rc<dyn Fn() -> bool>),
    Done(ProcessId),
    All { children: Vec<NodeId>, results: Vec<Option<Wake>>, remaining: usize },
    Any { children: Vec<NodeId> },
}

struct WaitNode {
    pid: ProcessId,
    parent: Option<(NodeId, usize)>,
    kind: NodeKind,
}

#[derive(Default)]
struct LockState {
    holder: Option<ProcessId>,
    queue: VecDeque<NodeId>,
    /// Granted, but the grant event has not reached the waiter yet.
    pending: Option<NodeId>,
    acquisitions: u64,
    releases: u64,
}

/// Lock counters for audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockStats {
    pub holder: Option<ProcessId>,
    pub acquisitions: u64,
    pub releases: u64,
}

struct EngineState {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Event>,
    next_pid: u64,
    next_node: NodeId,
    current: Option<ProcessId>,
    registered: bool,
    wake_slot: Option<Wake>,
    closed: bool,
    nodes: HashMap<NodeId, WaitNode>,
    locks: Vec<LockState>,
    signals: Vec<Vec<NodeId>>,
    live: HashSet<ProcessId>,
    done: HashMap<ProcessId, Output>,
    done_waiters: HashMap<ProcessId, Vec<NodeId>>,
    rng: ChaCha8Rng,
    trace: Trace,
    events_processed: u64,
}

struct Shared {
    st: RefCell<EngineState>,
    procs: RefCell<HashMap<ProcessId, BoxFuture>>,
}

/// Handle to a simulation. Cloning is cheap and every clone drives the same
/// engine.
#[derive(Clone)]
pub struct Sim {
    shared: Rc<Shared>,
}

impl Sim {
    pub fn new(seed: u64) -> Self {
        let st = EngineState {
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            next_pid: 0,
            next_node: 0,
            current: None,
            registered: false,
            wake_slot: None,
            closed: false,
            nodes: HashMap::new(),
            locks: Vec::new(),
            signals: Vec::new(),
            live: HashSet::new(),
            done: HashMap::new(),
            done_waiters: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Trace::default(),
            events_processed: 0,
        };
        Sim { shared: Rc::new(Shared { st: RefCell::new(st), procs: RefCell::new(HashMap::new()) }) }
    }

    fn st(&self) -> RefMut<'_, EngineState> {
        self.shared.st.borrow_mut()
    }

    pub fn now(&self) -> f64 {
        self.shared.st.borrow().now
    }

    pub fn current(&self) -> Option<ProcessId> {
        self.shared.st.borrow().current
    }

    pub fn set_trace_level(&self, level: TraceLevel) {
        self.st().trace.level = level;
    }

    pub fn trace_level(&self) -> TraceLevel {
        self.shared.st.borrow().trace.level
    }

    pub fn trace(&self) -> Trace {
        self.shared.st.borrow().trace.clone()
    }

    /// Record a domain-level event (kept only at [`TraceLevel::Full`]).
    pub fn trace_event(&self, kind: &str, detail: impl FnOnce() -> String) {
        let mut st = self.st();
        if st.trace.level == TraceLevel::Full {
            let (t, pid) = (st.now, st.current.map(|p| p.0));
            st.trace.push_domain(t, pid, kind, detail());
        }
    }

    pub fn events_processed(&self) -> u64 {
        self.shared.st.borrow().events_processed
    }

    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.st().rng)
    }

    pub fn new_lock(&self) -> LockId {
        let mut st = self.st();
        st.locks.push(LockState::default());
        LockId(st.locks.len() - 1)
    }

    pub fn new_signal(&self) -> SignalId {
        let mut st = self.st();
        st.signals.push(Vec::new());
        SignalId(st.signals.len() - 1)
    }

    pub fn lock_stats(&self, lock: LockId) -> Option<LockStats> {
        self.shared.st.borrow().locks.get(lock.0).map(|l| LockStats {
            holder: l.holder,
            acquisitions: l.acquisitions,
            releases: l.releases,
        })
    }

    pub fn is_locked(&self, lock: LockId) -> bool {
        self.shared.st.borrow().locks.get(lock.0).is_some_and(|l| l.holder.is_some())
    }

    /// Stop accepting new processes.
    pub fn close(&self) {
        self.st().closed = true;
    }

    /// Register a process; it starts at the current time, after anything
    /// already scheduled for that time.
    pub fn spawn<F, T>(&self, fut: F) -> Result<ProcessId>
    where
        F: Future<Output = T> + 'static,
        T: 'static,
    {
        let pid = {
            let mut st = self.st();
            if st.closed {
                return Err(Error::EngineClosed);
            }
            let pid = ProcessId(st.next_pid);
            st.next_pid += 1;
            st.live.insert(pid);
            let now = st.now;
            let parent = st.current.map(|p| p.0);
            st.trace.push_engine(now, parent, "spawn", format!("{}", pid.0));
            push_event(&mut st, now, EventKind::Start(pid));
            pid
        };
        let boxed: BoxFuture = Box::pin(async move { Rc::new(fut.await) as Output });
        self.shared.procs.borrow_mut().insert(pid, boxed);
        Ok(pid)
    }

    /// Run `f` at `now + delay` outside any process.
    pub fn schedule(&self, delay: f64, f: impl FnOnce() + 'static) {
        let mut st = self.st();
        let t = st.now + delay.max(0.0);
        push_event(&mut st, t, EventKind::Callback(Box::new(f)));
    }

    /// Suspend the calling process until `cond` is satisfied.
    pub fn wait(&self, cond: Condition) -> WaitFuture {
        WaitFuture { sim: self.clone(), cond: Some(cond), registered: false }
    }

    pub fn timeout(&self, delay: f64) -> WaitFuture {
        self.wait(Condition::Timeout(delay))
    }

    pub fn lock(&self, lock: LockId) -> WaitFuture {
        self.wait(Condition::Lock(lock))
    }

    /// Release a lock held by the calling process.
    pub fn release(&self, lock: LockId) -> Result<()> {
        let mut st = self.st();
        let cur = st.current;
        let Some(l) = st.locks.get_mut(lock.0) else {
            return Err(Error::NotHolder(lock.0));
        };
        if l.holder.is_none() || l.holder != cur {
            return Err(Error::NotHolder(lock.0));
        }
        l.holder = None;
        l.releases += 1;
        let now = st.now;
        st.trace.push_engine(now, cur.map(|p| p.0), "release", format!("{}", lock.0));
        grant_next(&mut st, lock);
        Ok(())
    }

    /// Wake everything subscribed to `signal`. Subscribers are removed, so a
    /// burst of notifications in one instant resumes each waiter once.
    pub fn notify(&self, signal: SignalId) {
        let mut st = self.st();
        let Some(subs) = st.signals.get_mut(signal.0) else { return };
        let subs = std::mem::take(subs);
        let now = st.now;
        for id in subs {
            let is_query = matches!(st.nodes.get(&id).map(|n| &n.kind), Some(NodeKind::Query(..)));
            let kind = if is_query { EventKind::Probe(id) } else { EventKind::Fire(id, Wake::Fired) };
            push_event(&mut st, now, kind);
        }
    }

    pub fn is_done(&self, pid: ProcessId) -> bool {
        self.shared.st.borrow().done.contains_key(&pid)
    }

    pub fn output<T: 'static>(&self, pid: ProcessId) -> Option<Rc<T>> {
        self.shared.st.borrow().done.get(&pid).cloned().and_then(|o| o.downcast::<T>().ok())
    }

    pub fn live_processes(&self) -> usize {
        self.shared.st.borrow().live.len()
    }

    pub fn pending_events(&self) -> usize {
        self.shared.st.borrow().queue.len()
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.shared.st.borrow().queue.peek().map(|e| e.time)
    }

    /// Process one event. Returns false when the queue is empty.
    pub fn step(&self) -> bool {
        let ev = {
            let mut st = self.st();
            let Some(ev) = st.queue.pop() else { return false };
            st.now = ev.time;
            st.events_processed += 1;
            ev
        };
        match ev.kind {
            EventKind::Start(pid) => self.poll(pid, None),
            EventKind::Fire(id, w) => self.fire(id, w),
            EventKind::Probe(id) => self.probe(id),
            EventKind::Callback(f) => f(),
        }
        true
    }

    /// Process every event with time `<= t_end`, then park the clock at
    /// `t_end`. Returns the time of the last processed event, or `t_end` if
    /// nothing ran.
    pub fn run_until(&self, t_end: f64) -> f64 {
        self.run_until_with(t_end, || false)
    }

    /// Like [`Sim::run_until`], but also stops as soon as `stop` holds after an
    /// event. The clock is left at the stopping event in that case.
    pub fn run_until_with(&self, t_end: f64, mut stop: impl FnMut() -> bool) -> f64 {
        let mut last = None;
        loop {
            match self.next_event_time() {
                Some(t) if t <= t_end => {
                    self.step();
                    last = Some(t);
                    if stop() {
                        return t;
                    }
                }
                _ => break,
            }
        }
        let mut st = self.st();
        if st.now < t_end {
            st.now = t_end;
        }
        last.unwrap_or(t_end)
    }

    /// Run until nothing is scheduled.
    pub fn run(&self) -> f64 {
        while self.step() {}
        self.now()
    }

    fn poll(&self, pid: ProcessId, wake: Option<Wake>) {
        let Some(mut fut) = self.shared.procs.borrow_mut().remove(&pid) else { return };
        {
            let mut st = self.st();
            st.current = Some(pid);
            st.registered = false;
            st.wake_slot = wake;
            let now = st.now;
            st.trace.push_engine(now, Some(pid.0), "resume", String::new());
        }
        let mut cx = Context::from_waker(Waker::noop());
        let res = fut.as_mut().poll(&mut cx);
        let registered = {
            let mut st = self.st();
            st.current = None;
            st.wake_slot = None;
            st.registered
        };
        match res {
            Poll::Ready(out) => self.finish(pid, out),
            Poll::Pending => {
                assert!(registered, "process {} suspended without awaiting a Sim condition", pid.0);
                self.shared.procs.borrow_mut().insert(pid, fut);
            }
        }
    }

    fn finish(&self, pid: ProcessId, out: Output) {
        let mut st = self.st();
        st.live.remove(&pid);
        st.done.insert(pid, out.clone());
        let now = st.now;
        st.trace.push_engine(now, Some(pid.0), "done", String::new());
        for id in st.done_waiters.remove(&pid).unwrap_or_default() {
            push_event(&mut st, now, EventKind::Fire(id, Wake::Done(out.clone())));
        }
    }

    fn register(&self, pid: ProcessId, cond: Condition) {
        let mut probes = Vec::new();
        {
            let mut st = self.st();
            st.registered = true;
            build(&mut st, pid, None, cond, &mut probes);
        }
        // Query probes may borrow unrelated state, so run them with the
        // engine borrow released.
        for (id, probe, signal) in probes {
            let hit = probe();
            let mut st = self.st();
            if !st.nodes.contains_key(&id) {
                continue;
            }
            if hit {
                let now = st.now;
                push_event(&mut st, now, EventKind::Fire(id, Wake::Fired));
            } else if let Some(subs) = st.signals.get_mut(signal.0) {
                subs.push(id);
            }
        }
    }

    fn probe(&self, id: NodeId) {
        let (probe, signal) = {
            let st = self.shared.st.borrow();
            match st.nodes.get(&id).map(|n| &n.kind) {
                Some(NodeKind::Query(s, p)) => (p.clone(), *s),
                _ => return,
            }
        };
        if probe() {
            self.fire(id, Wake::Fired);
        } else if let Some(subs) = self.st().signals.get_mut(signal.0) {
            subs.push(id);
        }
    }

    fn fire(&self, id: NodeId, wake: Wake) {
        let mut st = self.st();
        let Some(node) = st.nodes.remove(&id) else { return };
        if let NodeKind::Lock(l) = node.kind {
            let lock = &mut st.locks[l.0];
            if lock.pending == Some(id) {
                lock.pending = None;
            }
        }
        let mut wake = wake;
        let mut parent = node.parent;
        let pid = node.pid;
        while let Some((pid_node, idx)) = parent {
            let Some(p) = st.nodes.get_mut(&pid_node) else { return };
            match &mut p.kind {
                NodeKind::Any { children } => {
                    let losers: Vec<NodeId> =
                        children.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, c)| *c).collect();
                    let p = st.nodes.remove(&pid_node).expect("parent exists");
                    for c in losers {
                        cancel(&mut st, c);
                    }
                    wake = Wake::Any { index: idx, wake: Box::new(wake) };
                    parent = p.parent;
                }
                NodeKind::All { results, remaining, .. } => {
                    results[idx] = Some(wake);
                    *remaining -= 1;
                    if *remaining > 0 {
                        return;
                    }
                    let p = st.nodes.remove(&pid_node).expect("parent exists");
                    let NodeKind::All { results, .. } = p.kind else { unreachable!() };
                    wake = Wake::All(results.into_iter().map(|r| r.expect("all children fired")).collect());
                    parent = p.parent;
                }
                _ => unreachable!("leaf nodes have no children"),
            }
        }
        drop(st);
        self.poll(pid, Some(wake));
    }
}

fn push_event(st: &mut EngineState, time: f64, kind: EventKind) {
    let seq = st.seq;
    st.seq += 1;
    st.queue.push(Event { time, seq, kind });
}

fn grant_next(st: &mut EngineState, lock: LockId) {
    let l = &mut st.locks[lock.0];
    if l.holder.is_some() {
        return;
    }
    let Some(id) = l.queue.pop_front() else { return };
    let pid = st.nodes[&id].pid;
    let l = &mut st.locks[lock.0];
    l.holder = Some(pid);
    l.pending = Some(id);
    l.acquisitions += 1;
    let now = st.now;
    st.trace.push_engine(now, Some(pid.0), "acquire", format!("{}", lock.0));
    push_event(st, now, EventKind::Fire(id, Wake::Fired));
}

type PendingProbe = (NodeId, Rc<dyn Fn() -> bool>, SignalId);

fn build(
    st: &mut EngineState,
    pid: ProcessId,
    parent: Option<(NodeId, usize)>,
    cond: Condition,
    probes: &mut Vec<PendingProbe>,
) -> NodeId {
    let id = st.next_node;
    st.next_node += 1;
    let now = st.now;
    match cond {
        Condition::Timeout(d) => {
            st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Timer });
            push_event(st, now + d.max(0.0), EventKind::Fire(id, Wake::Fired));
        }
        Condition::Lock(l) => {
            if l.0 >= st.locks.len() {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Timer });
                push_event(st, now, EventKind::Fire(id, Wake::TargetGone));
            } else {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Lock(l) });
                st.locks[l.0].queue.push_back(id);
                grant_next(st, l);
            }
        }
        Condition::Changed(s) => {
            if s.0 >= st.signals.len() {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Timer });
                push_event(st, now, EventKind::Fire(id, Wake::TargetGone));
            } else {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Signal(s) });
                st.signals[s.0].push(id);
            }
        }
        Condition::Query { signal, probe } => {
            if signal.0 >= st.signals.len() {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Timer });
                push_event(st, now, EventKind::Fire(id, Wake::TargetGone));
            } else {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Query(signal, probe.clone()) });
                probes.push((id, probe, signal));
            }
        }
        Condition::ProcessDone(target) => {
            st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Done(target) });
            if let Some(out) = st.done.get(&target).cloned() {
                push_event(st, now, EventKind::Fire(id, Wake::Done(out)));
            } else if st.live.contains(&target) {
                st.done_waiters.entry(target).or_default().push(id);
            } else {
                push_event(st, now, EventKind::Fire(id, Wake::TargetGone));
            }
        }
        Condition::AllOf(cs) => {
            if cs.is_empty() {
                st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Timer });
                push_event(st, now, EventKind::Fire(id, Wake::All(Vec::new())));
                return id;
            }
            let n = cs.len();
            st.nodes.insert(
                id,
                WaitNode {
                    pid,
                    parent,
                    kind: NodeKind::All { children: Vec::new(), results: vec![None; n], remaining: n },
                },
            );
            let kids: Vec<NodeId> =
                cs.into_iter().enumerate().map(|(i, c)| build(st, pid, Some((id, i)), c, probes)).collect();
            if let Some(NodeKind::All { children, .. }) = st.nodes.get_mut(&id).map(|n| &mut n.kind) {
                *children = kids;
            }
        }
        Condition::AnyOf(cs) => {
            st.nodes.insert(id, WaitNode { pid, parent, kind: NodeKind::Any { children: Vec::new() } });
            let kids: Vec<NodeId> =
                cs.into_iter().enumerate().map(|(i, c)| build(st, pid, Some((id, i)), c, probes)).collect();
            if let Some(NodeKind::Any { children }) = st.nodes.get_mut(&id).map(|n| &mut n.kind) {
                *children = kids;
            }
        }
    }
    id
}

/// Drop a registration and everything below it.
fn cancel(st: &mut EngineState, id: NodeId) {
    let Some(node) = st.nodes.remove(&id) else { return };
    match node.kind {
        NodeKind::Timer => {}
        NodeKind::Lock(l) => {
            let lock = &mut st.locks[l.0];
            if lock.pending == Some(id) {
                // granted but never delivered: hand it on
                lock.pending = None;
                lock.holder = None;
                lock.releases += 1;
                grant_next(st, l);
            } else {
                lock.queue.retain(|x| *x != id);
            }
        }
        NodeKind::Signal(s) | NodeKind::Query(s, _) => st.signals[s.0].retain(|x| *x != id),
        NodeKind::Done(p) => {
            if let Some(w) = st.done_waiters.get_mut(&p) {
                w.retain(|x| *x != id);
            }
        }
        NodeKind::All { children, .. } | NodeKind::Any { children } => {
            for c in children {
                cancel(st, c);
            }
        }
    }
}

/// Future returned by [`Sim::wait`].
pub struct WaitFuture {
    sim: Sim,
    cond: Option<Condition>,
    registered: bool,
}

impl Future for WaitFuture {
    type Output = Wake;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Wake> {
        if !self.registered {
            let pid = self.sim.current().expect("Sim::wait awaited outside a simulation process");
            let cond = self.cond.take().expect("condition present until registered");
            self.registered = true;
            self.sim.register(pid, cond);
            return Poll::Pending;
        }
        let mut st = self.sim.st();
        match st.wake_slot.take() {
            Some(w) => Poll::Ready(w),
            None => {
                st.registered = true;
                Poll::Pending
            }
        }
    }
}
