//! Python bindings: scenario runs, sweeps, and a hands-on `Network` for
//! driving registers, gates, measurements and protocols from Python.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qnetsim::backends::{BackendKind, Basis, Gate};
use qnetsim::engine::Sim;
use qnetsim::net::{Net, RegRef, RegisterSpec, Target};
use qnetsim::protocols::{self, EntanglerConfig, NodePred, SlotFilter, SwapperConfig};
use qnetsim::scenario::{self, Overrides, RunReport, ScenarioConfig, SweepSpec};
use qnetsim::tagquery::Pattern;
use qnetsim::zoo::{circuits, states, CircuitResult};
use qnetsim::Error;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn backend(name: &str) -> PyResult<BackendKind> {
    name.parse().map_err(err)
}

fn gate(name: &str) -> PyResult<Gate> {
    Ok(match name.to_ascii_uppercase().as_str() {
        "X" => Gate::X,
        "Y" => Gate::Y,
        "Z" => Gate::Z,
        "H" => Gate::H,
        "S" => Gate::S,
        "SDG" => Gate::Sdg,
        "T" => Gate::T,
        "CNOT" | "CX" => Gate::CNOT,
        "CZ" => Gate::CZ,
        "SWAP" => Gate::SWAP,
        _ => return Err(PyValueError::new_err(format!("unknown gate {name:?}"))),
    })
}

fn basis(name: &str) -> PyResult<Basis> {
    Ok(match name.to_ascii_uppercase().as_str() {
        "X" => Basis::X,
        "Y" => Basis::Y,
        "Z" => Basis::Z,
        _ => return Err(PyValueError::new_err(format!("unknown basis {name:?}"))),
    })
}

fn refs(slots: &[(usize, usize)]) -> Vec<RegRef> {
    slots.iter().map(|&(n, s)| RegRef::new(n, s)).collect()
}

/// Result of a scenario run.
#[pyclass(name = "Report", unsendable)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn end_time(&self) -> f64 {
        self.inner.end_time
    }

    #[getter]
    fn stop(&self) -> String {
        self.inner.stop.to_string()
    }

    #[getter]
    fn breaches(&self) -> Vec<String> {
        self.inner.breaches.clone()
    }

    #[getter]
    fn events(&self) -> u64 {
        self.inner.events
    }

    fn count(&self, kind: &str) -> usize {
        self.inner.count(kind)
    }

    /// Metrics as a list of dicts.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .metrics
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("time", m.time)?;
                d.set_item("kind", &m.kind)?;
                d.set_item("node_a", m.node_a)?;
                d.set_item("node_b", m.node_b)?;
                d.set_item("uuid", m.uuid)?;
                d.set_item("seq", m.seq)?;
                d.set_item("fidelity", m.fidelity)?;
                d.set_item("latency", m.latency)?;
                d.set_item("detail", &m.detail)?;
                Ok(d)
            })
            .collect()
    }

    fn metrics_csv(&self) -> String {
        qnetsim::metrics::to_csv(&self.inner.metrics)
    }

    fn trace_ndjson(&self) -> String {
        self.inner.trace.to_ndjson()
    }
}

/// Run a scenario given as a file path or as TOML text.
#[pyfunction]
#[pyo3(signature = (path=None, text=None, seed=None, backend=None, until=None))]
fn run_scenario(
    path: Option<String>,
    text: Option<String>,
    seed: Option<u64>,
    backend: Option<String>,
    until: Option<f64>,
) -> PyResult<PyReport> {
    let mut cfg = match (path, text) {
        (Some(p), None) => ScenarioConfig::load(std::path::Path::new(&p)).map_err(err)?,
        (None, Some(t)) => ScenarioConfig::from_toml(&t).map_err(err)?,
        _ => return Err(PyValueError::new_err("give exactly one of path or text")),
    };
    let backend = backend.as_deref().map(self::backend).transpose()?;
    Overrides { seed, backend, t_end: until, metrics: None, trace: None }.apply(&mut cfg);
    cfg.outputs = Default::default();
    Ok(PyReport { inner: scenario::run(&cfg).map_err(err)? })
}

/// Sweep one parameter; returns (value, mean, stderr, n) rows.
#[pyfunction]
#[pyo3(signature = (text, param, grid, metric, repeats=1))]
fn sweep(text: &str, param: String, grid: Vec<f64>, metric: String, repeats: usize) -> PyResult<Vec<(f64, f64, f64, usize)>> {
    let rows = scenario::sweep(text, &SweepSpec { param, grid, metric, repeats }).map_err(err)?;
    Ok(rows.into_iter().map(|r| (r.value, r.mean, r.stderr, r.n)).collect())
}

/// Exact 2-to-1 purification of two Werner pairs of Bell fidelity `f`:
/// (success probability, output fidelity).
#[pyfunction]
fn purify_werner(f: f64) -> PyResult<(f64, f64)> {
    let pair = states::werner_pair(f).and_then(|s| s.express_dense()).map_err(err)?;
    circuits::purification_exact(&[pair.clone(), pair], None).map_err(err)
}

/// A network of registers driven step by step from Python.
#[pyclass(name = "Network", unsendable)]
struct PyNetwork {
    sim: Sim,
    net: Net,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (slots, backend="stabilizer", seed=0))]
    fn new(slots: Vec<usize>, backend: &str, seed: u64) -> PyResult<Self> {
        let sim = Sim::new(seed);
        let specs = slots.into_iter().map(RegisterSpec::new).collect();
        let net = Net::new(&sim, specs, self::backend(backend)?).map_err(err)?;
        Ok(PyNetwork { sim, net })
    }

    #[getter]
    fn now(&self) -> f64 {
        self.sim.now()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.net.num_nodes()
    }

    /// Add a quantum edge and a classical edge with `latency` alongside it.
    #[pyo3(signature = (a, b, latency=1.0))]
    fn add_edge(&self, a: usize, b: usize, latency: f64) -> PyResult<()> {
        self.net.add_quantum_edge(a, b).map_err(err)?;
        self.net.add_classical_edge(a, b, latency).map_err(err)
    }

    /// Put a zoo state (e.g. "perfect_pair") into the given slots.
    fn initialize(&self, slots: Vec<(usize, usize)>, state: &str) -> PyResult<()> {
        let s = states::lookup(state).map_err(err)?;
        self.net.initialize(&refs(&slots), &s).map_err(err)
    }

    fn apply_gate(&self, name: &str, slots: Vec<(usize, usize)>) -> PyResult<()> {
        self.net.apply_gate(gate(name)?, &refs(&slots)).map_err(err)
    }

    /// Measure one slot; returns 1 for the +1 eigenvalue, 2 for -1.
    #[pyo3(signature = (node, slot, basis="Z"))]
    fn measure(&self, node: usize, slot: usize, basis: &str) -> PyResult<u8> {
        Ok(self.net.measure(RegRef::new(node, slot), self::basis(basis)?).map_err(err)?.index())
    }

    fn traceout(&self, node: usize, slot: usize) -> PyResult<()> {
        self.net.traceout(RegRef::new(node, slot)).map_err(err)
    }

    fn is_assigned(&self, node: usize, slot: usize) -> bool {
        self.net.is_assigned(RegRef::new(node, slot))
    }

    /// Fidelity of the slots' joint state with a zoo state.
    fn fidelity(&self, slots: Vec<(usize, usize)>, state: &str) -> PyResult<f64> {
        let s = states::lookup(state).map_err(err)?;
        self.net.fidelity(&refs(&slots), &s).map_err(err)
    }

    /// Expectation of a Pauli string such as "XX" over the slots.
    fn expectation(&self, slots: Vec<(usize, usize)>, pauli: &str) -> PyResult<f64> {
        let p = pauli.parse().map_err(err)?;
        self.net.expectation(&refs(&slots), &p).map_err(err)
    }

    /// Density matrix of the slots as nested lists of (re, im).
    fn density_matrix(&self, slots: Vec<(usize, usize)>) -> PyResult<Vec<Vec<(f64, f64)>>> {
        let rho = self.net.reduced_state(&refs(&slots)).map_err(err)?.to_matrix();
        let d = rho.nrows();
        Ok((0..d).map(|i| (0..d).map(|j| (rho[(i, j)].re, rho[(i, j)].im)).collect()).collect())
    }

    /// Bell-measure two slots of one node; returns the (x, z) frame bits.
    fn swap(&self, node: usize, a: usize, b: usize) -> PyResult<(bool, bool)> {
        match circuits::local_entanglement_swap(&self.net, RegRef::new(node, a), RegRef::new(node, b)).map_err(err)? {
            CircuitResult::Bits(x, z) => Ok((x, z)),
            _ => unreachable!(),
        }
    }

    /// 2-to-1 purification of pair (ka, kb) using (sa, sb). Returns success.
    fn purify2to1(&self, ka: (usize, usize), kb: (usize, usize), sa: (usize, usize), sb: (usize, usize)) -> PyResult<bool> {
        let r = |p: (usize, usize)| RegRef::new(p.0, p.1);
        match circuits::purify2to1(&self.net, r(ka), r(kb), r(sa), r(sb)).map_err(err)? {
            CircuitResult::Heralded(ok) => Ok(ok),
            _ => unreachable!(),
        }
    }

    /// Start an entangler between two adjacent nodes.
    #[pyo3(signature = (a, b, pairstate="perfect_pair", success_prob=1.0, attempt_duration=1.0, rounds=None))]
    fn entangler(
        &self,
        a: usize,
        b: usize,
        pairstate: &str,
        success_prob: f64,
        attempt_duration: f64,
        rounds: Option<u64>,
    ) -> PyResult<()> {
        let mut c = EntanglerConfig::new(a, b);
        c.pairstate = states::lookup(pairstate).map_err(err)?;
        c.success_prob = success_prob;
        c.attempt_duration = attempt_duration;
        c.rounds = rounds;
        protocols::spawn_entangler(&self.net, c).map_err(err)?;
        Ok(())
    }

    /// Start a swapper at `node` joining a lower and a higher neighbor.
    #[pyo3(signature = (node, low, high, rounds=None))]
    fn swapper(&self, node: usize, low: usize, high: usize, rounds: Option<u64>) -> PyResult<()> {
        let c = SwapperConfig {
            node,
            node_l: NodePred::Eq(low),
            node_h: NodePred::Eq(high),
            chooseslots: SlotFilter::all(),
            rounds,
        };
        protocols::spawn_swapper(&self.net, c).map_err(err)?;
        Ok(())
    }

    fn tracker(&self, node: usize) -> PyResult<()> {
        protocols::spawn_tracker(&self.net, node).map_err(err)?;
        Ok(())
    }

    /// Advance simulated time; returns the time of the last event.
    fn run_until(&self, t: f64) -> f64 {
        self.sim.run_until(t)
    }

    /// Tags on one slot whose type is `name`, as strings.
    fn tags(&self, node: usize, slot: usize, name: &str) -> Vec<String> {
        self.net
            .queryall(Target::Slot(RegRef::new(node, slot)), &Pattern::new(name))
            .into_iter()
            .map(|h| h.tag.to_string())
            .collect()
    }

    fn metrics_csv(&self) -> String {
        qnetsim::metrics::to_csv(&self.net.metrics())
    }
}

#[pymodule]
pub fn qnetsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(purify_werner, m)?)?;
    Ok(())
}
