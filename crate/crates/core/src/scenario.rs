//! Declarative scenarios: a TOML file describes the network, link model,
//! protocols, flows and stopping rule; [`run`] builds and executes it, and
//! [`sweep`] repeats it over a parameter grid.

use std::fmt;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::backends::BackendKind;
use crate::engine::{Condition, ProcessId, Sim, Trace, TraceLevel};
use crate::error::{Error, Result};
use crate::mbqc::{self, CssCodeSpec, MbqcOutcome};
use crate::metrics::{self, MetricsRecord};
use crate::net::{Audit, Forwarding, Net, NoiseProcess, RegRef, RegisterSpec, Target};
use crate::pauli::Pauli;
use crate::protocols::{
    self, CutoffConfig, EntanglerConfig, EntanglerOutcome, GraphSpec, NodePred, PurifierConfig, SlotFilter,
    SwapperConfig,
};
use crate::qtcp::{self, Flow, LinkConfig, StaticWindow};
use crate::symbolics::SymState;
use crate::tagquery::Pattern;
use crate::tags;
use crate::zoo::states;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<Topology>,
    #[serde(default)]
    pub link: LinkModel,
    #[serde(default)]
    pub protocols: Vec<ProtocolSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    pub stop: StopSpec,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub quantum_edges: Vec<[usize; 2]>,
    /// Explicit classical edges. When empty, every quantum edge gets one
    /// with `classical_latency`.
    #[serde(default)]
    pub classical_edges: Vec<ClassicalEdge>,
    #[serde(default = "one")]
    pub classical_latency: f64,
    #[serde(default)]
    pub forwarding: Forwarding,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub slots: usize,
    #[serde(default)]
    pub noise: Vec<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Half-open slot range; all slots when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<[usize; 2]>,
    pub process: NoiseProcess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalEdge {
    pub a: usize,
    pub b: usize,
    pub latency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    #[serde(default = "one")]
    pub success_prob: f64,
    #[serde(default = "one")]
    pub attempt_duration: f64,
    /// Zoo entry, e.g. `perfect_pair` or `depolarized_pair(0.99)`.
    #[serde(default = "perfect_pair_name")]
    pub pairstate: String,
    /// Bell fidelity of a Werner pair; overrides `pairstate` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel { success_prob: 1.0, attempt_duration: 1.0, pairstate: perfect_pair_name(), fidelity: None }
    }
}

impl LinkModel {
    pub fn state(&self) -> Result<SymState> {
        match self.fidelity {
            Some(f) => states::werner_pair(f),
            None => states::lookup(&self.pairstate),
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn perfect_pair_name() -> String {
    "perfect_pair".into()
}

fn any_node() -> NodePred {
    NodePred::Any
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    Entangler {
        node_a: usize,
        node_b: usize,
        #[serde(default)]
        choose_a: SlotFilter,
        #[serde(default)]
        choose_b: SlotFilter,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rounds: Option<u64>,
        #[serde(default = "yes")]
        tag: bool,
    },
    Swapper {
        node: usize,
        #[serde(default = "any_node")]
        node_l: NodePred,
        #[serde(default = "any_node")]
        node_h: NodePred,
        #[serde(default)]
        chooseslots: SlotFilter,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rounds: Option<u64>,
    },
    /// Trackers on the listed nodes, or on every node.
    Tracker {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nodes: Option<Vec<usize>>,
    },
    Cutoff {
        node: usize,
        retention: f64,
        period: f64,
    },
    Purifier {
        node_a: usize,
        node_b: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choose_a: Option<SlotFilter>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        choose_b: Option<SlotFilter>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rounds: Option<u64>,
    },
    /// Graph state on the storage slots, followed by a stabilizer check.
    GraphState {
        vertices: Vec<usize>,
        edges: Vec<[usize; 2]>,
        #[serde(default)]
        comm_slot: usize,
        #[serde(default = "storage_default")]
        storage_slot: usize,
        #[serde(default)]
        uuid: u64,
    },
    /// Connectionless service: end-node controllers on `end_nodes`, plus
    /// network-node and link controllers everywhere.
    Qtcp {
        end_nodes: Vec<usize>,
        #[serde(default = "window_default")]
        window: usize,
    },
    /// [4,2,2] distillation. Builds its own two-sided network, so the
    /// scenario must not declare a topology.
    Mbqc {
        #[serde(default = "session_default")]
        session: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        injection: Option<Injection>,
    },
}

fn storage_default() -> usize {
    1
}

fn window_default() -> usize {
    1
}

fn session_default() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub pair: usize,
    /// One of I, X, Y, Z.
    pub pauli: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub src: usize,
    pub dst: usize,
    pub npairs: u64,
    pub uuid: u64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Stop when nothing is scheduled.
    #[serde(default)]
    pub quiescence: bool,
    /// Stop as soon as every goal holds.
    #[serde(default)]
    pub until: Vec<Goal>,
}

/// At least `count` slots of `node` carry a `tag` naming `remote_node`
/// (and a remote slot inside `remote_slots`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub node: usize,
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_node: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_slots: Option<[usize; 2]>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_level: Option<TraceLevel>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    fn num_nodes(&self) -> usize {
        match &self.topology {
            Some(t) => t.nodes.len(),
            None => 2 * 6,
        }
    }

    fn slots(&self, node: usize) -> usize {
        self.topology.as_ref().map_or(2, |t| t.nodes[node].slots)
    }

    /// Check every reference before anything is built.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, why: String| Err(Error::Config(format!("{field}: {why}")));
        let has_mbqc = self.protocols.iter().any(|p| matches!(p, ProtocolSpec::Mbqc { .. }));
        match (&self.topology, has_mbqc) {
            (Some(_), true) => return bad("topology".into(), "mbqc scenarios build their own network".into()),
            (None, false) => return bad("topology".into(), "missing".into()),
            _ => {}
        }
        let n = self.num_nodes();
        let node_ok = |field: String, v: usize| -> Result<()> {
            if v < n {
                Ok(())
            } else {
                Err(Error::Config(format!("{field}: node {v} does not exist ({n} nodes)")))
            }
        };
        if let Some(t) = &self.topology {
            if t.nodes.is_empty() {
                return bad("topology.nodes".into(), "empty".into());
            }
            for (i, nd) in t.nodes.iter().enumerate() {
                for (j, ns) in nd.noise.iter().enumerate() {
                    let f = format!("topology.nodes[{i}].noise[{j}]");
                    ns.process.validate().or_else(|e| bad(f.clone(), e.to_string()))?;
                    if let Some([lo, hi]) = ns.slots {
                        if lo >= hi || hi > nd.slots {
                            return bad(f, format!("slot range [{lo},{hi}) outside 0..{}", nd.slots));
                        }
                    }
                }
            }
            for (i, [a, b]) in t.quantum_edges.iter().enumerate() {
                node_ok(format!("topology.quantum_edges[{i}]"), *a)?;
                node_ok(format!("topology.quantum_edges[{i}]"), *b)?;
                if a == b {
                    return bad(format!("topology.quantum_edges[{i}]"), "self loop".into());
                }
            }
            for (i, e) in t.classical_edges.iter().enumerate() {
                node_ok(format!("topology.classical_edges[{i}]"), e.a)?;
                node_ok(format!("topology.classical_edges[{i}]"), e.b)?;
                if !(e.latency >= 0.0 && e.latency.is_finite()) {
                    return bad(format!("topology.classical_edges[{i}].latency"), "must be finite and >= 0".into());
                }
            }
            if !(t.classical_latency >= 0.0 && t.classical_latency.is_finite()) {
                return bad("topology.classical_latency".into(), "must be finite and >= 0".into());
            }
        }
        if !(self.link.success_prob > 0.0 && self.link.success_prob <= 1.0) {
            return bad("link.success_prob".into(), format!("{} outside (0,1]", self.link.success_prob));
        }
        if !(self.link.attempt_duration > 0.0 && self.link.attempt_duration.is_finite()) {
            return bad("link.attempt_duration".into(), "must be positive".into());
        }
        if let Err(e) = self.link.state() {
            return bad("link".into(), e.to_string());
        }
        let slot_range_ok = |field: String, node: usize, f: &SlotFilter| -> Result<()> {
            if let Some([lo, hi]) = f.range {
                if lo >= hi || hi > self.slots(node) {
                    return Err(Error::Config(format!("{field}: slot range [{lo},{hi}) outside node {node}")));
                }
            }
            Ok(())
        };
        for (i, p) in self.protocols.iter().enumerate() {
            let f = |s: &str| format!("protocols[{i}].{s}");
            match p {
                ProtocolSpec::Entangler { node_a, node_b, choose_a, choose_b, .. } => {
                    node_ok(f("node_a"), *node_a)?;
                    node_ok(f("node_b"), *node_b)?;
                    slot_range_ok(f("choose_a"), *node_a, choose_a)?;
                    slot_range_ok(f("choose_b"), *node_b, choose_b)?;
                    if !self.has_quantum_edge(*node_a, *node_b) {
                        return bad(f("node_b"), format!("no quantum edge {node_a}-{node_b}"));
                    }
                }
                ProtocolSpec::Swapper { node, chooseslots, .. } => {
                    node_ok(f("node"), *node)?;
                    slot_range_ok(f("chooseslots"), *node, chooseslots)?;
                }
                ProtocolSpec::Tracker { nodes } => {
                    for &v in nodes.iter().flatten() {
                        node_ok(f("nodes"), v)?;
                    }
                }
                ProtocolSpec::Cutoff { node, retention, period } => {
                    node_ok(f("node"), *node)?;
                    if !(*retention > 0.0 && *period > 0.0) {
                        return bad(f("retention"), "retention and period must be positive".into());
                    }
                }
                ProtocolSpec::Purifier { node_a, node_b, choose_a, choose_b, .. } => {
                    node_ok(f("node_a"), *node_a)?;
                    node_ok(f("node_b"), *node_b)?;
                    if node_a == node_b {
                        return bad(f("node_b"), "purifier needs two nodes".into());
                    }
                    if let Some(c) = choose_a {
                        slot_range_ok(f("choose_a"), *node_a, c)?;
                    }
                    if let Some(c) = choose_b {
                        slot_range_ok(f("choose_b"), *node_b, c)?;
                    }
                }
                ProtocolSpec::GraphState { vertices, edges, comm_slot, storage_slot, .. } => {
                    for &v in vertices {
                        node_ok(f("vertices"), v)?;
                        if *comm_slot >= self.slots(v) || *storage_slot >= self.slots(v) || comm_slot == storage_slot {
                            return bad(f("storage_slot"), format!("bad slots on node {v}"));
                        }
                    }
                    for [a, b] in edges {
                        if *a >= vertices.len() || *b >= vertices.len() {
                            return bad(f("edges"), format!("edge ({a},{b}) names a missing vertex"));
                        }
                        if !self.has_quantum_edge(vertices[*a], vertices[*b]) {
                            return bad(f("edges"), format!("no quantum edge {}-{}", vertices[*a], vertices[*b]));
                        }
                    }
                }
                ProtocolSpec::Qtcp { end_nodes, window } => {
                    for &v in end_nodes {
                        node_ok(f("end_nodes"), v)?;
                    }
                    if *window == 0 {
                        return bad(f("window"), "must be at least 1".into());
                    }
                }
                ProtocolSpec::Mbqc { injection, .. } => {
                    if let Some(inj) = injection {
                        if inj.pair >= 4 {
                            return bad(f("injection.pair"), format!("{} outside 0..4", inj.pair));
                        }
                        if let Err(e) = parse_pauli(&inj.pauli) {
                            return bad(f("injection.pauli"), e.to_string());
                        }
                    }
                }
            }
        }
        let qtcp_ends: Vec<usize> = self
            .protocols
            .iter()
            .filter_map(|p| match p {
                ProtocolSpec::Qtcp { end_nodes, .. } => Some(end_nodes.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        for (i, fl) in self.flows.iter().enumerate() {
            node_ok(format!("flows[{i}].src"), fl.src)?;
            node_ok(format!("flows[{i}].dst"), fl.dst)?;
            if let Err(e) = Flow::new(fl.src, fl.dst, fl.npairs, fl.uuid) {
                return bad(format!("flows[{i}]"), e.to_string());
            }
            if !qtcp_ends.contains(&fl.src) || !qtcp_ends.contains(&fl.dst) {
                return bad(format!("flows[{i}]"), "both ends need a qtcp end-node controller".into());
            }
        }
        for (i, g) in self.stop.until.iter().enumerate() {
            node_ok(format!("stop.until[{i}].node"), g.node)?;
            if let Some(r) = g.remote_node {
                node_ok(format!("stop.until[{i}].remote_node"), r)?;
            }
        }
        match self.stop.t_end {
            Some(t) if !(t >= 0.0) => return bad("stop.t_end".into(), "must be >= 0".into()),
            None if !self.stop.quiescence && self.stop.until.is_empty() => {
                return bad("stop".into(), "needs t_end, quiescence or until".into())
            }
            _ => {}
        }
        Ok(())
    }

    fn has_quantum_edge(&self, a: usize, b: usize) -> bool {
        self.topology.as_ref().is_some_and(|t| t.quantum_edges.iter().any(|e| *e == [a, b] || *e == [b, a]))
    }
}

fn parse_pauli(s: &str) -> Result<Pauli> {
    let mut it = s.trim().chars();
    match (it.next().and_then(Pauli::from_char), it.next()) {
        (Some(p), None) => Ok(p),
        _ => Err(Error::Config(format!("bad Pauli {s:?}"))),
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub t_end: Option<f64>,
    pub metrics: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(t) = self.t_end {
            cfg.stop.t_end = Some(t);
        }
        if let Some(m) = &self.metrics {
            cfg.outputs.metrics = Some(m.clone());
        }
        if let Some(t) = &self.trace {
            cfg.outputs.trace = Some(t.clone());
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Goals,
    Quiescence,
    TEnd,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Goals => "goals",
            StopReason::Quiescence => "quiescence",
            StopReason::TEnd => "t_end",
        })
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub end_time: f64,
    pub stop: StopReason,
    pub metrics: Vec<MetricsRecord>,
    pub trace: Trace,
    pub audit: Audit,
    pub events: u64,
    /// Invariant breaches found during or after the run.
    pub breaches: Vec<String>,
}

impl RunReport {
    pub fn count(&self, kind: &str) -> usize {
        self.metrics.iter().filter(|m| m.kind == kind).count()
    }

    pub fn of_kind(&self, kind: &str) -> Vec<&MetricsRecord> {
        self.metrics.iter().filter(|m| m.kind == kind).collect()
    }
}

type Check = Box<dyn Fn(&Sim) -> Option<String>>;

fn watch<T: 'static>(label: String, pid: ProcessId) -> Check {
    Box::new(move |sim: &Sim| match sim.output::<Result<T>>(pid) {
        Some(r) => r.as_ref().as_ref().err().map(|e| format!("{label}: {e}")),
        None => None,
    })
}

/// Build the network described by the config.
pub fn build(cfg: &ScenarioConfig, sim: &Sim) -> Result<Net> {
    let topo = cfg.topology.as_ref().ok_or_else(|| Error::Config("topology: missing".into()))?;
    let specs = topo
        .nodes
        .iter()
        .map(|nd| {
            let mut r = RegisterSpec::new(nd.slots);
            for ns in &nd.noise {
                let [lo, hi] = ns.slots.unwrap_or([0, nd.slots]);
                for s in lo..hi {
                    r.noise[s] = ns.process;
                }
            }
            r.backend = nd.backend;
            r
        })
        .collect();
    let net = Net::new(sim, specs, cfg.backend)?;
    for [a, b] in &topo.quantum_edges {
        net.add_quantum_edge(*a, *b)?;
    }
    if topo.classical_edges.is_empty() {
        net.mirror_classical(topo.classical_latency)?;
    } else {
        for e in &topo.classical_edges {
            net.add_classical_edge(e.a, e.b, e.latency)?;
        }
    }
    net.set_forwarding(topo.forwarding, false);
    Ok(net)
}

/// Run a validated config. Config problems come back as `Err`; invariant
/// breaches are listed in the report.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let sim = Sim::new(cfg.seed);
    let level = cfg.outputs.trace_level.unwrap_or(if cfg.outputs.trace.is_some() { TraceLevel::Full } else { TraceLevel::Off });
    sim.set_trace_level(level);
    let pairstate = cfg.link.state()?;
    let mut checks: Vec<Check> = Vec::new();

    let mbqc_spec = cfg.protocols.iter().find_map(|p| match p {
        ProtocolSpec::Mbqc { session, injection } => Some((*session, injection.clone())),
        _ => None,
    });
    let net = match &mbqc_spec {
        Some(_) => mbqc::build_network(&sim, CssCodeSpec::code_422(), cfg.backend, 1.0)?.0,
        None => build(cfg, &sim)?,
    };

    for (i, p) in cfg.protocols.iter().enumerate() {
        let label = format!("protocols[{i}]");
        match p {
            ProtocolSpec::Entangler { node_a, node_b, choose_a, choose_b, rounds, tag } => {
                let mut e = EntanglerConfig::new(*node_a, *node_b);
                e.pairstate = pairstate.clone();
                e.choose_a = choose_a.clone();
                e.choose_b = choose_b.clone();
                e.success_prob = cfg.link.success_prob;
                e.attempt_duration = cfg.link.attempt_duration;
                e.rounds = *rounds;
                e.tag = *tag;
                checks.push(watch::<EntanglerOutcome>(label, protocols::spawn_entangler(&net, e)?));
            }
            ProtocolSpec::Swapper { node, node_l, node_h, chooseslots, rounds } => {
                let s = SwapperConfig {
                    node: *node,
                    node_l: node_l.clone(),
                    node_h: node_h.clone(),
                    chooseslots: chooseslots.clone(),
                    rounds: *rounds,
                };
                checks.push(watch::<u64>(label, protocols::spawn_swapper(&net, s)?));
            }
            ProtocolSpec::Tracker { nodes } => {
                let all: Vec<usize> = (0..net.num_nodes()).collect();
                for &v in nodes.as_ref().unwrap_or(&all) {
                    checks.push(watch::<()>(format!("{label} node {v}"), protocols::spawn_tracker(&net, v)?));
                }
            }
            ProtocolSpec::Cutoff { node, retention, period } => {
                let c = CutoffConfig { node: *node, retention: *retention, period: *period };
                checks.push(watch::<()>(label, protocols::spawn_cutoff(&net, c)?));
            }
            ProtocolSpec::Purifier { node_a, node_b, choose_a, choose_b, tag, rounds } => {
                let mut c = PurifierConfig::new(*node_a, *node_b);
                if let Some(f) = choose_a {
                    c.choose_a = f.clone();
                }
                if let Some(f) = choose_b {
                    c.choose_b = f.clone();
                }
                if let Some(t) = tag {
                    c.tag = t.clone();
                }
                c.rounds = *rounds;
                checks.push(watch::<(u64, u64)>(label, protocols::spawn_purifier(&net, c)?));
            }
            ProtocolSpec::GraphState { vertices, edges, comm_slot, storage_slot, uuid } => {
                let spec = GraphSpec {
                    vertices: vertices.clone(),
                    edges: edges.iter().map(|e| (e[0], e[1])).collect(),
                    comm_slot: *comm_slot,
                    storage_slot: *storage_slot,
                    uuid: *uuid,
                    success_prob: cfg.link.success_prob,
                    attempt_duration: cfg.link.attempt_duration,
                };
                let pid = protocols::spawn_graph_state_constructor(&net, spec.clone())?;
                checks.push(watch::<Vec<Vec<(usize, usize)>>>(label.clone(), pid));
                let n2 = net.clone();
                let checker = sim.spawn(async move {
                    n2.sim().wait(Condition::ProcessDone(pid)).await;
                    check_graph_state(&n2, &spec)
                })?;
                checks.push(watch::<()>(format!("{label} check"), checker));
            }
            ProtocolSpec::Qtcp { end_nodes, window } => {
                let w = *window;
                let (p, d, ps) = (cfg.link.success_prob, cfg.link.attempt_duration, pairstate.clone());
                qtcp::install(&net, end_nodes, || Box::new(StaticWindow(w)), |a, b| LinkConfig {
                    node_a: a,
                    node_b: b,
                    success_prob: p,
                    attempt_duration: d,
                    pairstate: ps.clone(),
                })?;
            }
            ProtocolSpec::Mbqc { .. } => {}
        }
    }
    if let Some((session, injection)) = mbqc_spec {
        let (_, mut mc) = mbqc::build_network(&Sim::new(0), CssCodeSpec::code_422(), cfg.backend, 1.0)?;
        mc.session = session;
        mc.pairstate = pairstate.clone();
        mc.success_prob = cfg.link.success_prob;
        mc.attempt_duration = cfg.link.attempt_duration;
        if let Some(inj) = injection {
            mc.injection = Some((inj.pair, parse_pauli(&inj.pauli)?));
        }
        let pid = mbqc::spawn_session(&net, mc)?;
        checks.push(watch::<MbqcOutcome>("mbqc".into(), pid));
        let n2 = net.clone();
        let reporter = sim.spawn(async move {
            n2.sim().wait(Condition::ProcessDone(pid)).await;
            if let Some(out) = n2.sim().output::<Result<MbqcOutcome>>(pid) {
                if let Ok(o) = out.as_ref() {
                    let mut r = MetricsRecord::new(n2.now(), "mbqc-done").detail(if o.success { "accept" } else { "reject" });
                    if let Some(f) = o.joint_fidelity {
                        r = r.fidelity(f);
                    }
                    n2.record(r);
                }
            }
            Ok::<(), Error>(())
        })?;
        checks.push(watch::<()>("mbqc report".into(), reporter));
    }
    for fl in &cfg.flows {
        Flow::new(fl.src, fl.dst, fl.npairs, fl.uuid)?.submit(&net)?;
    }

    let t_end = cfg.stop.t_end.unwrap_or(f64::INFINITY);
    let goals = cfg.stop.until.clone();
    let mut stop = StopReason::TEnd;
    let end_time = if !goals.is_empty() {
        let mut met = false;
        let t = sim.run_until_with(t_end, || {
            met = goals.iter().all(|g| goal_hits(&net, g).len() >= g.count);
            met
        });
        if met {
            stop = StopReason::Goals;
        } else if sim.next_event_time().is_none() {
            stop = StopReason::Quiescence;
        }
        t
    } else {
        let t = sim.run_until(t_end);
        if sim.next_event_time().is_none() && (cfg.stop.quiescence || t_end.is_infinite()) {
            stop = StopReason::Quiescence;
        }
        t
    };
    info!("stopped at t={end_time} ({stop})");

    for g in &cfg.stop.until {
        for (r, remote) in goal_hits(&net, g).into_iter().take(g.count) {
            let mut rec = MetricsRecord::new(sim.now(), "pair-delivered").nodes(r.node, remote.node).detail(g.tag.clone());
            if net.backend(r.node)? == BackendKind::Dense && net.is_assigned(remote) {
                rec = rec.fidelity(net.fidelity(&[r, remote], &states::perfect_pair())?);
            }
            net.record(rec);
        }
    }

    let mut breaches: Vec<String> = checks.iter().filter_map(|c| c(&sim)).collect();
    if let Err(e) = net.check_bijection() {
        breaches.push(e.to_string());
    }
    let metrics = net.metrics();
    if stop == StopReason::Quiescence {
        breaches.extend(quiescent_audit(&net));
        // a flow that never finished at quiescence is stuck for good,
        // usually because every memory is held by a half-built path
        for fl in &cfg.flows {
            let done = metrics.iter().any(|m| m.kind == "flow-done" && m.uuid == Some(fl.uuid));
            if !done {
                let acked = metrics.iter().filter(|m| m.kind == "datagram-success" && m.uuid == Some(fl.uuid)).count();
                breaches.push(format!("liveness: flow {} stalled with {acked} of {} datagrams acknowledged", fl.uuid, fl.npairs));
            }
        }
    }
    Ok(RunReport {
        end_time,
        stop,
        metrics,
        trace: sim.trace(),
        audit: net.audit(),
        events: sim.events_processed(),
        breaches,
    })
}

/// Slots of `g.node` matching the goal, oldest first, with their partners.
fn goal_hits(net: &Net, g: &Goal) -> Vec<(RegRef, RegRef)> {
    let mut pat = Pattern::new(&g.tag);
    if let Some(r) = g.remote_node {
        pat = pat.eq(r);
    }
    let mut hits: Vec<_> = net
        .queryall(Target::Register(g.node), &pat)
        .into_iter()
        .filter_map(|h| {
            let slot = h.slot?;
            let (rn, rs) = (h.tag.fields.first()?.as_int()? as usize, h.tag.fields.get(1)?.as_int()? as usize);
            if let Some([lo, hi]) = g.remote_slots {
                if rs < lo || rs >= hi {
                    return None;
                }
            }
            Some((h.time, h.id, RegRef::new(g.node, slot), RegRef::new(rn, rs)))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.dedup_by_key(|h| h.2);
    hits.into_iter().map(|(_, _, r, p)| (r, p)).collect()
}

fn check_graph_state(net: &Net, spec: &GraphSpec) -> Result<()> {
    let slots: Vec<RegRef> = spec.vertices.iter().map(|&v| RegRef::new(v, spec.storage_slot)).collect();
    let n = slots.len();
    let mut worst: f64 = 1.0;
    for g in states::graph_state_generators(n, &spec.edges) {
        worst = worst.min(net.expectation(&slots, &g)?);
    }
    let ok = (worst - 1.0).abs() < 1e-9;
    net.record(
        MetricsRecord::new(net.now(), if ok { "cluster-ok" } else { "cluster-bad" })
            .fidelity(worst)
            .detail(format!("{n} vertices")),
    );
    if ok {
        Ok(())
    } else {
        Err(Error::InvariantBreach(format!("graph-state stabilizer expectation {worst}")))
    }
}

/// Checks that only hold once everything has settled: no locks held,
/// counterpart tags reciprocal and backed by a shared state.
fn quiescent_audit(net: &Net) -> Vec<String> {
    let mut out = Vec::new();
    if net.messages_in_flight() > 0 {
        return out;
    }
    let counterparts = [tags::ENTANGLEMENT_COUNTERPART, tags::DISTILLED];
    for node in 0..net.num_nodes() {
        for slot in 0..net.num_slots(node) {
            let r = RegRef::new(node, slot);
            if net.is_locked(r) {
                out.push(format!("lock hygiene: {r} still locked at quiescence"));
            }
            for name in counterparts {
                for h in net.queryall(Target::Slot(r), &Pattern::new(name)) {
                    let remote = RegRef::new(h.tag.idx(0), h.tag.idx(1));
                    let back = Pattern::new(name).eq(node).eq(slot);
                    let reciprocal = net.query(Target::Slot(remote), &back).is_some();
                    let shared = net.is_assigned(r) && net.state_id(r).is_some() && net.state_id(r) == net.state_id(remote);
                    if !reciprocal || !shared {
                        out.push(format!("tag conservation: {r} names {remote} via {} without a matching pair", h.tag));
                    }
                }
            }
        }
    }
    out
}

/// Write the metrics and trace files the config asks for.
pub fn write_outputs(cfg: &ScenarioConfig, report: &RunReport) -> Result<()> {
    let io = |p: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", p.display()));
    if let Some(p) = &cfg.outputs.metrics {
        let f = std::fs::File::create(p).map_err(|e| io(p, e))?;
        metrics::write_csv(&report.metrics, std::io::BufWriter::new(f))?;
    }
    if let Some(p) = &cfg.outputs.trace {
        let f = std::fs::File::create(p).map_err(|e| io(p, e))?;
        report.trace.write_ndjson(std::io::BufWriter::new(f)).map_err(|e| io(p, e))?;
    }
    Ok(())
}

/// Exit status for the command-line runner: 1 for configuration problems,
/// 2 for invariant breaches.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::NoSuchParam(_) | Error::Io(_) | Error::InvalidWeight(_) | Error::NotCss(_) => 1,
        _ => 2,
    }
}

// ---- sweeps ----

#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Dotted path into the scenario, e.g. `link.fidelity` or `protocols.0.rounds`.
    pub param: String,
    pub grid: Vec<f64>,
    /// `kind.field` with field one of fidelity, latency, count.
    pub metric: String,
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
    /// Repeats that produced the metric.
    pub n: usize,
}

/// Set the number at a dotted path of a parsed scenario.
pub fn set_param(doc: &mut toml::Value, path: &str, v: f64) -> Result<()> {
    let mut cur = doc;
    for key in path.split('.') {
        cur = match cur {
            toml::Value::Table(t) => t.get_mut(key),
            toml::Value::Array(a) => key.parse::<usize>().ok().and_then(|i| a.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::NoSuchParam(path.to_string()))?;
    }
    *cur = match cur {
        toml::Value::Integer(_) if v.fract() == 0.0 => toml::Value::Integer(v as i64),
        toml::Value::Integer(_) | toml::Value::Float(_) => toml::Value::Float(v),
        _ => return Err(Error::NoSuchParam(format!("{path} is not numeric"))),
    };
    Ok(())
}

fn metric_value(report: &RunReport, metric: &str) -> Result<Option<f64>> {
    let (kind, field) = metric.rsplit_once('.').ok_or_else(|| Error::Config(format!("metric {metric:?} is not kind.field")))?;
    let recs = report.of_kind(kind);
    let vals: Vec<f64> = match field {
        "count" => return Ok(Some(recs.len() as f64)),
        "fidelity" => recs.iter().filter_map(|r| r.fidelity).collect(),
        "latency" => recs.iter().filter_map(|r| r.latency).collect(),
        _ => return Err(Error::Config(format!("metric field {field:?} is not fidelity, latency or count"))),
    };
    Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
}

/// One run per grid point and repeat (seed + repeat index); grid points run
/// on separate threads.
pub fn sweep(text: &str, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    if spec.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let base: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut docs = Vec::new();
    for &v in &spec.grid {
        let mut d = base.clone();
        set_param(&mut d, &spec.param, v)?;
        let cfg: ScenarioConfig = d.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        docs.push(cfg);
    }
    let results: Vec<Result<SweepRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = docs
            .iter()
            .zip(&spec.grid)
            .map(|(cfg, &value)| {
                s.spawn(move || {
                    let mut vals = Vec::new();
                    for r in 0..spec.repeats {
                        let mut c = cfg.clone();
                        c.seed = cfg.seed.wrapping_add(r as u64);
                        c.outputs = Outputs::default();
                        let report = run(&c)?;
                        if let Some(b) = report.breaches.first() {
                            return Err(Error::InvariantBreach(b.clone()));
                        }
                        if let Some(x) = metric_value(&report, &spec.metric)? {
                            vals.push(x);
                        }
                    }
                    let n = vals.len();
                    let mean = if n == 0 { f64::NAN } else { vals.iter().sum::<f64>() / n as f64 };
                    let stderr = if n < 2 {
                        0.0
                    } else {
                        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                        (var / n as f64).sqrt()
                    };
                    Ok(SweepRow { value, mean, stderr, n })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.into_iter().collect()
}

pub fn write_sweep<W: std::io::Write>(param: &str, rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(e.to_string());
    out.write_record([param, "mean", "stderr", "n"]).map_err(err)?;
    for r in rows {
        out.write_record([r.value.to_string(), r.mean.to_string(), r.stderr.to_string(), r.n.to_string()])
            .map_err(err)?;
    }
    out.flush().map_err(|e| Error::Io(e.to_string()))
}
