//! Numerical state representations behind a common interface.

pub mod channels;
pub mod dense;
pub mod gates;
pub mod tableau;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use channels::Channel;
pub use dense::DenseState;
pub use gates::Gate;
pub use tableau::Tableau;

use crate::error::{Error, Result};
use crate::pauli::PauliString;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
    Z,
}

/// Measurement result. `Plus` (reported as 1) is the +1 eigenvalue,
/// `Minus` (reported as 2) the -1 eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn from_bit(b: bool) -> Self {
        if b {
            Outcome::Minus
        } else {
            Outcome::Plus
        }
    }

    pub fn bit(self) -> bool {
        self == Outcome::Minus
    }

    /// 1 or 2.
    pub fn index(self) -> u8 {
        if self.bit() {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Stabilizer,
    Dense,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stabilizer" | "tableau" => Ok(BackendKind::Stabilizer),
            "dense" => Ok(BackendKind::Dense),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendState {
    Dense(DenseState),
    Tableau(Tableau),
}

impl BackendState {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendState::Dense(_) => BackendKind::Dense,
            BackendState::Tableau(_) => BackendKind::Stabilizer,
        }
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            BackendState::Dense(d) => d.num_qubits(),
            BackendState::Tableau(t) => t.num_qubits(),
        }
    }

    /// Size of the state in the "dimension" sense used for audits: the Hilbert
    /// space dimension for dense states, `2^n` for tableaux too.
    pub fn dim(&self) -> f64 {
        2f64.powi(self.num_qubits() as i32)
    }

    pub fn memory_bytes(&self) -> usize {
        match self {
            BackendState::Dense(d) => d.memory_bytes(),
            BackendState::Tableau(t) => {
                let n = t.num_qubits();
                2 * n * (2 * n.div_ceil(64).max(1) * 8 + 1)
            }
        }
    }

    pub fn apply_gate(&mut self, gate: Gate, targets: &[usize]) -> Result<()> {
        if targets.len() != gate.arity() {
            return Err(Error::ArityMismatch { expected: gate.arity(), got: targets.len() });
        }
        match self {
            BackendState::Dense(d) => d.apply_unitary(targets, &gate.matrix()),
            BackendState::Tableau(t) => {
                let a = targets[0];
                match gate {
                    Gate::X => t.x(a),
                    Gate::Y => t.y(a),
                    Gate::Z => t.z(a),
                    Gate::H => t.h(a),
                    Gate::S => t.s(a),
                    Gate::Sdg => t.sdg(a),
                    Gate::CNOT => t.cnot(a, targets[1]),
                    Gate::CZ => t.cz(a, targets[1]),
                    Gate::SWAP => t.swap(a, targets[1]),
                    Gate::T => return Err(Error::UnsupportedOnBackend("T gate on a stabilizer tableau".into())),
                }
                Ok(())
            }
        }
    }

    /// Apply a Pauli string acting on `targets`.
    pub fn apply_pauli(&mut self, p: &PauliString, targets: &[usize]) -> Result<()> {
        if p.len() != targets.len() {
            return Err(Error::ArityMismatch { expected: p.len(), got: targets.len() });
        }
        let full = p.embed(self.num_qubits(), targets);
        match self {
            BackendState::Dense(d) => d.apply_pauli(&full),
            BackendState::Tableau(t) => {
                t.apply_pauli(&full);
                Ok(())
            }
        }
    }

    /// Apply a channel. Dense states get the exact map; tableaux sample one
    /// Pauli from the (twirled) channel. Returns false if the tableau path
    /// had to approximate.
    pub fn apply_channel(&mut self, ch: &Channel, targets: &[usize], rng: &mut impl Rng) -> Result<bool> {
        if targets.len() != ch.arity() {
            return Err(Error::ArityMismatch { expected: ch.arity(), got: targets.len() });
        }
        match self {
            BackendState::Dense(d) => {
                d.apply_kraus(targets, &ch.kraus()?)?;
                Ok(true)
            }
            BackendState::Tableau(_) => {
                let (terms, exact) = ch.pauli_terms()?;
                let p = sample_pauli(&terms, rng);
                if !p.is_identity() {
                    self.apply_pauli(&p, targets)?;
                }
                Ok(exact)
            }
        }
    }

    pub fn measure(&mut self, target: usize, basis: Basis, rng: &mut impl Rng) -> Result<(Outcome, f64)> {
        match self {
            BackendState::Dense(d) => d.measure(target, basis, rng),
            BackendState::Tableau(t) => {
                let (b, p) = t.measure(target, basis, None, rng)?;
                Ok((Outcome::from_bit(b), p))
            }
        }
    }

    pub fn project(&mut self, target: usize, basis: Basis, outcome: Outcome, rng: &mut impl Rng) -> Result<f64> {
        match self {
            BackendState::Dense(d) => d.project(target, basis, outcome),
            BackendState::Tableau(t) => Ok(t.measure(target, basis, Some(outcome.bit()), rng)?.1),
        }
    }

    /// Delete a qubit already in the given eigenstate.
    pub fn remove_eigen_qubit(&mut self, target: usize, basis: Basis, outcome: Outcome) -> Result<()> {
        match self {
            BackendState::Dense(d) => d.remove_eigen_qubit(target, basis, outcome),
            BackendState::Tableau(t) => {
                t.rotate_to_z(target, basis);
                t.drop_z_eigen_qubit(target);
                Ok(())
            }
        }
    }

    /// Discard a qubit without looking at it.
    pub fn trace_out(&mut self, target: usize, rng: &mut impl Rng) -> Result<()> {
        match self {
            BackendState::Dense(d) => {
                let keep: Vec<usize> = (0..d.num_qubits()).filter(|&q| q != target).collect();
                *d = d.partial_trace(&keep)?;
                Ok(())
            }
            BackendState::Tableau(t) => {
                t.remove_qubit(target, rng);
                Ok(())
            }
        }
    }

    pub fn compose(&self, other: &BackendState) -> Result<BackendState> {
        match (self, other) {
            (BackendState::Dense(a), BackendState::Dense(b)) => Ok(BackendState::Dense(a.compose(b))),
            (BackendState::Tableau(a), BackendState::Tableau(b)) => Ok(BackendState::Tableau(a.compose(b))),
            _ => Err(Error::BackendMismatch),
        }
    }

    pub fn to_dense(&self) -> DenseState {
        match self {
            BackendState::Dense(d) => d.clone(),
            BackendState::Tableau(t) => {
                DenseState::from_ket(t.to_state_vector()).expect("tableau vectors have power-of-two length")
            }
        }
    }

    pub fn expectation(&self, p: &PauliString) -> f64 {
        match self {
            BackendState::Dense(d) => d.expectation(p),
            BackendState::Tableau(t) => t.expectation(p),
        }
    }
}

pub fn sample_pauli(terms: &[(f64, PauliString)], rng: &mut impl Rng) -> PauliString {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (w, p) in terms {
        acc += w;
        if u < acc {
            return p.clone();
        }
    }
    terms.last().expect("non-empty mixture").1.clone()
}
