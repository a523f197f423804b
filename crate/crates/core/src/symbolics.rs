//! Backend-independent descriptions of states, operators and channels, and
//! their translation ("express") into a concrete backend.

use std::fmt;
use std::ops::{Add, Div, Mul};

use num_complex::Complex64 as C64;
use rand::Rng;

use crate::backends::{BackendKind, BackendState, Basis, DenseState, Gate, Tableau};
use crate::error::{Error, Result};
use crate::gf2;
use crate::pauli::{Pauli, PauliString};

pub use crate::backends::Channel as SymChannel;

/// Largest superposition we convert to a tableau by Pauli search.
const MAX_STABILIZER_SEARCH: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum SymState {
    /// Eigenstate of a single-qubit Pauli: index 1 is the +1 eigenstate,
    /// index 2 the -1 eigenstate.
    Ket { axis: Basis, index: u8 },
    Tensor(Vec<SymState>),
    /// Linear combination. All terms pure: a superposition. All terms
    /// density operators: a weighted mixture.
    Sum(Vec<(C64, SymState)>),
    Projector(Box<SymState>),
    MaximallyMixed(usize),
    Stabilizer(Vec<PauliString>),
}

macro_rules! named_ket {
    ($name:ident, $axis:ident, $idx:expr) => {
        pub fn $name() -> SymState {
            SymState::Ket { axis: Basis::$axis, index: $idx }
        }
    };
}

impl SymState {
    named_ket!(z1, Z, 1);
    named_ket!(z2, Z, 2);
    named_ket!(x1, X, 1);
    named_ket!(x2, X, 2);
    named_ket!(y1, Y, 1);
    named_ket!(y2, Y, 2);

    /// Parse whitespace- or comma-separated generators, e.g. `"ZX XZ"`.
    pub fn stabilizer(s: &str) -> Result<SymState> {
        Ok(SymState::Stabilizer(parse_stabilizer(s)?))
    }

    pub fn tensor(&self, other: &SymState) -> SymState {
        let mut parts = match self {
            SymState::Tensor(p) => p.clone(),
            s => vec![s.clone()],
        };
        match other {
            SymState::Tensor(p) => parts.extend(p.iter().cloned()),
            s => parts.push(s.clone()),
        }
        SymState::Tensor(parts)
    }

    pub fn projector(&self) -> SymState {
        SymState::Projector(Box::new(self.clone()))
    }

    pub fn num_qubits(&self) -> usize {
        match self {
            SymState::Ket { .. } => 1,
            SymState::Tensor(p) => p.iter().map(|s| s.num_qubits()).sum(),
            SymState::Sum(t) => t.first().map_or(0, |(_, s)| s.num_qubits()),
            SymState::Projector(s) => s.num_qubits(),
            SymState::MaximallyMixed(n) => *n,
            SymState::Stabilizer(g) => g.first().map_or(0, |p| p.len()),
        }
    }

    /// True for ket-like expressions.
    pub fn is_pure(&self) -> bool {
        match self {
            SymState::Ket { .. } | SymState::Stabilizer(_) => true,
            SymState::Tensor(p) => p.iter().all(|s| s.is_pure()),
            SymState::Sum(t) => t.iter().all(|(_, s)| s.is_pure()),
            SymState::Projector(_) | SymState::MaximallyMixed(_) => false,
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            SymState::Ket { index, .. } if !(1..=2).contains(index) => {
                Err(Error::DimMismatch(format!("ket index {index} for a qubit")))
            }
            SymState::Tensor(p) => p.iter().try_for_each(|s| s.check()),
            SymState::Sum(t) => {
                let Some((_, first)) = t.first() else {
                    return Err(Error::InvalidWeight("empty sum".into()));
                };
                let n = first.num_qubits();
                let pure = first.is_pure();
                for (c, s) in t {
                    s.check()?;
                    if s.num_qubits() != n {
                        return Err(Error::DimMismatch("summands act on different numbers of qubits".into()));
                    }
                    if s.is_pure() != pure {
                        return Err(Error::InvalidWeight("cannot add a ket to a density operator".into()));
                    }
                    if !pure && (c.im.abs() > 1e-12 || c.re < -1e-12 || !c.re.is_finite()) {
                        return Err(Error::InvalidWeight(format!("mixture weight {c}")));
                    }
                }
                Ok(())
            }
            SymState::Projector(s) => {
                if !s.is_pure() {
                    return Err(Error::InvalidWeight("projector of a mixed state".into()));
                }
                s.check()
            }
            SymState::Stabilizer(g) => Tableau::from_stabilizers(g).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Normalized state vector of a pure expression.
    pub fn ket_vector(&self) -> Result<Vec<C64>> {
        self.check()?;
        if !self.is_pure() {
            return Err(Error::UnsupportedOnBackend("density operator has no state vector".into()));
        }
        let v = self.raw_vector()?;
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::InvalidWeight("zero vector".into()));
        }
        Ok(v.into_iter().map(|a| a / norm).collect())
    }

    fn raw_vector(&self) -> Result<Vec<C64>> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Ok(match self {
            SymState::Ket { axis, index } => {
                let plus = *index == 1;
                let c = |re, im| C64::new(re, im);
                match (axis, plus) {
                    (Basis::Z, true) => vec![c(1., 0.), c(0., 0.)],
                    (Basis::Z, false) => vec![c(0., 0.), c(1., 0.)],
                    (Basis::X, true) => vec![c(h, 0.), c(h, 0.)],
                    (Basis::X, false) => vec![c(h, 0.), c(-h, 0.)],
                    (Basis::Y, true) => vec![c(h, 0.), c(0., h)],
                    (Basis::Y, false) => vec![c(h, 0.), c(0., -h)],
                }
            }
            SymState::Tensor(parts) => {
                let mut acc = vec![C64::new(1.0, 0.0)];
                for p in parts {
                    let v = p.raw_vector()?;
                    acc = acc.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
                }
                acc
            }
            SymState::Sum(terms) => {
                let mut acc = vec![C64::new(0.0, 0.0); 1 << self.num_qubits()];
                for (c, s) in terms {
                    for (a, b) in acc.iter_mut().zip(s.raw_vector()?) {
                        *a += c * b;
                    }
                }
                acc
            }
            SymState::Stabilizer(g) => Tableau::from_stabilizers(g)?.to_state_vector(),
            _ => return Err(Error::UnsupportedOnBackend("density operator has no state vector".into())),
        })
    }

    pub fn express_dense(&self) -> Result<DenseState> {
        self.check()?;
        if self.is_pure() {
            return DenseState::from_ket(self.ket_vector()?);
        }
        let rho = self.raw_rho()?;
        let d = 1usize << self.num_qubits();
        let tr: f64 = (0..d).map(|i| rho[i * d + i].re).sum();
        if tr < 1e-12 {
            return Err(Error::InvalidWeight("zero trace".into()));
        }
        DenseState::from_rho(rho.into_iter().map(|x| x / tr).collect())
    }

    fn raw_rho(&self) -> Result<Vec<C64>> {
        if self.is_pure() {
            return Ok(DenseState::from_ket(self.ket_vector()?)?.to_rho());
        }
        Ok(match self {
            SymState::Projector(s) => DenseState::from_ket(s.ket_vector()?)?.to_rho(),
            SymState::MaximallyMixed(n) => DenseState::maximally_mixed(*n).to_rho(),
            SymState::Tensor(parts) => {
                let mut acc = DenseState::from_rho(vec![C64::new(1.0, 0.0)])?;
                for p in parts {
                    acc = acc.compose(&DenseState::from_rho(p.raw_rho()?)?);
                }
                acc.to_rho()
            }
            SymState::Sum(terms) => {
                let d = 1usize << self.num_qubits();
                let mut acc = vec![C64::new(0.0, 0.0); d * d];
                for (c, s) in terms {
                    for (a, b) in acc.iter_mut().zip(s.raw_rho()?) {
                        *a += c * b;
                    }
                }
                acc
            }
            _ => unreachable!("pure variants handled above"),
        })
    }

    pub fn express_stabilizer(&self) -> Result<StabilizerEnsemble> {
        self.check()?;
        let branches = self.stab_branches()?;
        let total: f64 = branches.iter().map(|b| b.weight).sum();
        Ok(StabilizerEnsemble {
            branches: branches.into_iter().map(|b| Branch { weight: b.weight / total, ..b }).collect(),
        })
    }

    fn stab_branches(&self) -> Result<Vec<Branch>> {
        let single = |t: Tableau| {
            let n = t.num_qubits();
            vec![Branch { weight: 1.0, tableau: t, twirl: vec![false; n] }]
        };
        Ok(match self {
            SymState::Ket { axis, index } => {
                let p = match axis {
                    Basis::X => Pauli::X,
                    Basis::Y => Pauli::Y,
                    Basis::Z => Pauli::Z,
                };
                let mut g = PauliString::from_paulis(&[p]);
                if *index == 2 {
                    g = g.negated();
                }
                single(Tableau::from_stabilizers(&[g])?)
            }
            SymState::Stabilizer(g) => single(Tableau::from_stabilizers(g)?),
            SymState::Projector(s) => s.stab_branches()?,
            SymState::MaximallyMixed(n) => {
                vec![Branch { weight: 1.0, tableau: Tableau::new(*n), twirl: vec![true; *n] }]
            }
            SymState::Tensor(parts) => {
                let mut acc = vec![Branch { weight: 1.0, tableau: Tableau::new(0), twirl: vec![] }];
                for p in parts {
                    let next = p.stab_branches()?;
                    acc = acc
                        .iter()
                        .flat_map(|a| {
                            next.iter().map(move |b| Branch {
                                weight: a.weight * b.weight,
                                tableau: a.tableau.compose(&b.tableau),
                                twirl: [a.twirl.clone(), b.twirl.clone()].concat(),
                            })
                        })
                        .collect();
                }
                acc
            }
            SymState::Sum(_) if self.is_pure() => {
                let n = self.num_qubits();
                if n > MAX_STABILIZER_SEARCH {
                    return Err(Error::UnsupportedOnBackend(format!(
                        "superposition on {n} qubits; write it as a stabilizer group"
                    )));
                }
                let psi = self.ket_vector()?;
                let gens = stabilizers_of_vector(&psi).ok_or_else(|| {
                    Error::UnsupportedOnBackend("superposition is not a stabilizer state".into())
                })?;
                single(Tableau::from_stabilizers(&gens)?)
            }
            SymState::Sum(terms) => {
                let mut out: Vec<Branch> = Vec::new();
                let mut deferred = Vec::new();
                for (c, s) in terms {
                    if c.re <= 0.0 {
                        continue;
                    }
                    if let SymState::MaximallyMixed(n) = s {
                        deferred.push((c.re, *n));
                        continue;
                    }
                    for b in s.stab_branches()? {
                        out.push(Branch { weight: b.weight * c.re, ..b });
                    }
                }
                // a fully twirled branch is maximally mixed whatever its base
                // state; reuse a sibling so sampling reads as a Pauli frame
                // on the ideal state
                for (w, n) in deferred {
                    let base = out.first().map(|b| b.tableau.clone()).unwrap_or_else(|| Tableau::new(n));
                    out.push(Branch { weight: w, tableau: base, twirl: vec![true; n] });
                }
                out
            }
        })
    }

    /// Express on the given backend, sampling mixtures for tableaux.
    pub fn express(&self, kind: BackendKind, rng: &mut impl Rng) -> Result<BackendState> {
        Ok(match kind {
            BackendKind::Dense => BackendState::Dense(self.express_dense()?),
            BackendKind::Stabilizer => BackendState::Tableau(self.express_stabilizer()?.sample(rng)),
        })
    }
}

impl Add for SymState {
    type Output = SymState;
    fn add(self, rhs: SymState) -> SymState {
        let one = C64::new(1.0, 0.0);
        let mut terms = match self {
            SymState::Sum(t) => t,
            s => vec![(one, s)],
        };
        match rhs {
            SymState::Sum(t) => terms.extend(t),
            s => terms.push((one, s)),
        }
        SymState::Sum(terms)
    }
}

impl Mul<C64> for SymState {
    type Output = SymState;
    fn mul(self, c: C64) -> SymState {
        match self {
            SymState::Sum(t) => SymState::Sum(t.into_iter().map(|(a, s)| (a * c, s)).collect()),
            s => SymState::Sum(vec![(c, s)]),
        }
    }
}

impl Mul<f64> for SymState {
    type Output = SymState;
    fn mul(self, c: f64) -> SymState {
        self * C64::new(c, 0.0)
    }
}

impl Mul<SymState> for f64 {
    type Output = SymState;
    fn mul(self, s: SymState) -> SymState {
        s * self
    }
}

impl Div<f64> for SymState {
    type Output = SymState;
    fn div(self, c: f64) -> SymState {
        self * (1.0 / c)
    }
}

impl fmt::Display for SymState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymState::Ket { axis, index } => write!(f, "{axis:?}{index}"),
            SymState::Tensor(p) => {
                let parts: Vec<String> = p.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", parts.join("⊗"))
            }
            SymState::Sum(t) => {
                let parts: Vec<String> = t
                    .iter()
                    .map(|(c, s)| if c.im == 0.0 { format!("{}·({s})", c.re) } else { format!("({c})·({s})") })
                    .collect();
                write!(f, "{}", parts.join(" + "))
            }
            SymState::Projector(s) => write!(f, "|{s}⟩⟨{s}|"),
            SymState::MaximallyMixed(n) => write!(f, "I/{}", 1u64 << n),
            SymState::Stabilizer(g) => {
                let parts: Vec<String> = g.iter().map(|p| p.to_string()).collect();
                write!(f, "𝒮[{}]", parts.join(" "))
            }
        }
    }
}

/// Weighted stabilizer states. A twirled qubit receives a uniformly random
/// Pauli when sampled, which makes it maximally mixed on average.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub weight: f64,
    pub tableau: Tableau,
    pub twirl: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerEnsemble {
    pub branches: Vec<Branch>,
}

impl StabilizerEnsemble {
    pub fn sample(&self, rng: &mut impl Rng) -> Tableau {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.branches.last().expect("non-empty ensemble");
        for b in &self.branches {
            acc += b.weight;
            if u < acc {
                pick = b;
                break;
            }
        }
        let mut t = pick.tableau.clone();
        if pick.twirl.iter().any(|&x| x) {
            let mut p = PauliString::identity(t.num_qubits());
            for (q, &tw) in pick.twirl.iter().enumerate() {
                if tw {
                    let k: u8 = rng.random_range(0..4);
                    p.set(q, [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][k as usize]);
                }
            }
            t.apply_pauli(&p);
        }
        t
    }

    /// Exact density matrix of the ensemble (small systems only).
    pub fn to_dense(&self) -> DenseState {
        let n = self.branches[0].tableau.num_qubits();
        let d = 1usize << n;
        let mut acc = vec![C64::new(0.0, 0.0); d * d];
        for b in &self.branches {
            let pure = DenseState::from_ket(b.tableau.to_state_vector()).expect("power of two");
            let mut s = pure;
            for (q, &tw) in b.twirl.iter().enumerate() {
                if tw {
                    let ch = SymChannel::Depolarize(1.0);
                    s.apply_kraus(&[q], &ch.kraus().expect("valid channel")).expect("valid target");
                }
            }
            for (a, x) in acc.iter_mut().zip(s.to_rho()) {
                *a += x * b.weight;
            }
        }
        DenseState::from_rho(acc).expect("square")
    }
}

/// Parse and validate a stabilizer group.
pub fn parse_stabilizer(s: &str) -> Result<Vec<PauliString>> {
    let gens: Result<Vec<PauliString>> =
        s.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).map(|t| t.parse()).collect();
    let gens = gens?;
    if gens.is_empty() {
        return Err(Error::InvalidStabilizerGroup("no generators".into()));
    }
    Tableau::from_stabilizers(&gens)?;
    Ok(gens)
}

/// Stabilizer generators of a pure state, found by checking every Pauli
/// string. `None` if the state is not a stabilizer state.
pub fn stabilizers_of_vector(psi: &[C64]) -> Option<Vec<PauliString>> {
    let n = psi.len().trailing_zeros() as usize;
    let mut gens: Vec<PauliString> = Vec::new();
    let mut rows: Vec<gf2::Row> = Vec::new();
    for code in 1..(1u64 << (2 * n)) {
        let mut p = PauliString::identity(n);
        for q in 0..n {
            let k = (code >> (2 * q)) & 3;
            p.set(q, [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z][k as usize]);
        }
        let pv = p.apply_to_vector(psi);
        let e: C64 = psi.iter().zip(&pv).map(|(a, b)| a.conj() * b).sum();
        if (e.re.abs() - 1.0).abs() > 1e-9 {
            continue;
        }
        let row = [p.x.clone(), p.z.clone()].concat();
        let mut trial = rows.clone();
        trial.push(row);
        if gf2::rank(&trial) > rows.len() {
            rows = trial;
            gens.push(if e.re < 0.0 { p.negated() } else { p });
            if gens.len() == n {
                return Some(gens);
            }
        }
    }
    None
}

/// Unitary built from named gates.
#[derive(Clone, Debug, PartialEq)]
pub enum SymOperator {
    Gate(Gate),
    Pauli(PauliString),
    /// `Product([A, B])` is `A·B`: B acts first.
    Product(Vec<SymOperator>),
    Tensor(Vec<SymOperator>),
}

impl SymOperator {
    pub fn arity(&self) -> usize {
        match self {
            SymOperator::Gate(g) => g.arity(),
            SymOperator::Pauli(p) => p.len(),
            SymOperator::Product(v) => v.first().map_or(0, |o| o.arity()),
            SymOperator::Tensor(v) => v.iter().map(|o| o.arity()).sum(),
        }
    }

    pub fn tensor(&self, other: &SymOperator) -> SymOperator {
        SymOperator::Tensor(vec![self.clone(), other.clone()])
    }

    /// Gates in application order, with targets local to this operator.
    pub fn gate_sequence(&self) -> Result<Vec<(Gate, Vec<usize>)>> {
        let mut out = Vec::new();
        self.push_gates(0, &mut out)?;
        Ok(out)
    }

    fn push_gates(&self, offset: usize, out: &mut Vec<(Gate, Vec<usize>)>) -> Result<()> {
        match self {
            SymOperator::Gate(g) => out.push((*g, (offset..offset + g.arity()).collect())),
            SymOperator::Pauli(p) => {
                for q in 0..p.len() {
                    let g = match p.get(q) {
                        Pauli::I => continue,
                        Pauli::X => Gate::X,
                        Pauli::Y => Gate::Y,
                        Pauli::Z => Gate::Z,
                    };
                    out.push((g, vec![offset + q]));
                }
            }
            SymOperator::Product(ops) => {
                let n = self.arity();
                for op in ops.iter().rev() {
                    if op.arity() != n {
                        return Err(Error::ArityMismatch { expected: n, got: op.arity() });
                    }
                    op.push_gates(offset, out)?;
                }
            }
            SymOperator::Tensor(ops) => {
                let mut o = offset;
                for op in ops {
                    op.push_gates(o, out)?;
                    o += op.arity();
                }
            }
        }
        Ok(())
    }
}

impl Mul for SymOperator {
    type Output = SymOperator;
    fn mul(self, rhs: SymOperator) -> SymOperator {
        SymOperator::Product(vec![self, rhs])
    }
}

impl From<Gate> for SymOperator {
    fn from(g: Gate) -> Self {
        SymOperator::Gate(g)
    }
}
