//! Local circuits. Each is written once against [`QuantumOps`] so the same
//! gate list runs on a network and on an exact branch enumerator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backends::{Basis, DenseState, Gate, Outcome};
use crate::error::{Error, Result};
use crate::net::{Net, RegRef};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CircuitResult {
    Bits(bool, bool),
    Heralded(bool),
    None,
}

/// The Pauli error type a purification check does not detect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeaveOut {
    X,
    Y,
    Z,
}

impl FromStr for LeaveOut {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim_start_matches(':') {
            "X" | "x" => Ok(LeaveOut::X),
            "Y" | "y" => Ok(LeaveOut::Y),
            "Z" | "z" => Ok(LeaveOut::Z),
            _ => Err(Error::Config(format!("leave-out must be X, Y or Z, got {s:?}"))),
        }
    }
}

impl fmt::Display for LeaveOut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// The operations circuits need from whatever holds the qubits.
pub trait QuantumOps {
    type Q: Copy + PartialEq + fmt::Debug;
    fn gate(&mut self, g: Gate, qs: &[Self::Q]) -> Result<()>;
    /// Measure and remove the qubit.
    fn measure_remove(&mut self, q: Self::Q, basis: Basis) -> Result<Outcome>;
    /// Drop the qubit without looking at it.
    fn discard(&mut self, q: Self::Q) -> Result<()>;
}

impl QuantumOps for Net {
    type Q = RegRef;
    fn gate(&mut self, g: Gate, qs: &[RegRef]) -> Result<()> {
        self.apply_gate(g, qs)
    }
    fn measure_remove(&mut self, q: RegRef, basis: Basis) -> Result<Outcome> {
        self.project_traceout(q, basis)
    }
    fn discard(&mut self, q: RegRef) -> Result<()> {
        self.traceout(q)
    }
}

/// Bell measurement on `a`, `b`. The partners of `a` and `b` then share a
/// Bell pair once X^x Z^z is applied to `b`'s partner.
pub fn swap_ops<H: QuantumOps>(h: &mut H, a: H::Q, b: H::Q) -> Result<(bool, bool)> {
    h.gate(Gate::CNOT, &[a, b])?;
    h.gate(Gate::H, &[a])?;
    let x = h.measure_remove(b, Basis::Z)?.bit();
    let z = h.measure_remove(a, Basis::Z)?.bit();
    Ok((x, z))
}

/// Non-local CZ between storage qubits `su` and `sv`, consuming the graph
/// pair (stabilizers ZX, XZ) on the comm qubits `cu`, `cv`. Returns the two
/// measurement bits; corrections are applied here, so the result is exact.
pub fn fusion_ops<H: QuantumOps>(h: &mut H, su: H::Q, cu: H::Q, cv: H::Q, sv: H::Q) -> Result<(bool, bool)> {
    // turn the graph pair into Phi+
    h.gate(Gate::H, &[cu])?;
    h.gate(Gate::CNOT, &[su, cu])?;
    let m1 = h.measure_remove(cu, Basis::Z)?.bit();
    if m1 {
        h.gate(Gate::X, &[cv])?;
    }
    // cv now mirrors su's Z value
    h.gate(Gate::CZ, &[cv, sv])?;
    let m2 = h.measure_remove(cv, Basis::X)?.bit();
    if m2 {
        h.gate(Gate::Z, &[su])?;
    }
    Ok((m1, m2))
}

fn to_z<H: QuantumOps>(h: &mut H, q: H::Q, l: LeaveOut) -> Result<()> {
    match l {
        LeaveOut::X => h.gate(Gate::H, &[q]),
        LeaveOut::Y => {
            h.gate(Gate::Sdg, &[q])?;
            h.gate(Gate::H, &[q])
        }
        LeaveOut::Z => Ok(()),
    }
}

fn from_z<H: QuantumOps>(h: &mut H, q: H::Q, l: LeaveOut) -> Result<()> {
    match l {
        LeaveOut::X => h.gate(Gate::H, &[q]),
        LeaveOut::Y => {
            h.gate(Gate::H, &[q])?;
            h.gate(Gate::S, &[q])
        }
        LeaveOut::Z => Ok(()),
    }
}

/// Copy the L(x)L parity of the checked pair onto the checking pair.
fn bilateral_check<H: QuantumOps>(h: &mut H, checked: (H::Q, H::Q), checker: (H::Q, H::Q), l: LeaveOut) -> Result<()> {
    for (c, t) in [(checked.0, checker.0), (checked.1, checker.1)] {
        to_z(h, c, l)?;
        h.gate(Gate::CNOT, &[c, t])?;
        from_z(h, c, l)?;
    }
    Ok(())
}

fn parity<H: QuantumOps>(h: &mut H, pair: (H::Q, H::Q)) -> Result<bool> {
    let a = h.measure_remove(pair.0, Basis::Z)?.bit();
    let b = h.measure_remove(pair.1, Basis::Z)?.bit();
    Ok(a ^ b)
}

/// Parity a perfect Phi+ pair gives for a check with leave-out `l`: only
/// YY has eigenvalue -1 on Phi+.
fn expected_parity(l: LeaveOut) -> bool {
    l == LeaveOut::Y
}

/// One bilateral-CNOT round. On failure the kept pair is discarded too.
pub fn purify2to1_ops<H: QuantumOps>(h: &mut H, ka: H::Q, kb: H::Q, sa: H::Q, sb: H::Q) -> Result<bool> {
    bilateral_check(h, (ka, kb), (sa, sb), LeaveOut::Z)?;
    let ok = parity(h, (sa, sb))? == expected_parity(LeaveOut::Z);
    if !ok {
        h.discard(ka)?;
        h.discard(kb)?;
    }
    Ok(ok)
}

/// Double selection: the first sacrificial pair checks the kept pair in the
/// `lo1` basis, the second checks the first in the `lo2` basis.
#[allow(clippy::too_many_arguments)]
pub fn purify3to1_ops<H: QuantumOps>(
    h: &mut H,
    lo1: LeaveOut,
    lo2: LeaveOut,
    keep: (H::Q, H::Q),
    sac1: (H::Q, H::Q),
    sac2: (H::Q, H::Q),
) -> Result<bool> {
    if lo1 == lo2 {
        return Err(Error::InvalidLeaveOut);
    }
    bilateral_check(h, keep, sac1, lo1)?;
    bilateral_check(h, sac1, sac2, lo2)?;
    // sac1 is left as Psi+ by a Y check and as Phi+ otherwise
    let sac1_yy = if lo1 == LeaveOut::Y { LeaveOut::Z } else { LeaveOut::Y };
    let p2 = parity(h, sac2)? == (lo2 == sac1_yy);
    let p1 = parity(h, sac1)? == expected_parity(lo1);
    let ok = p1 && p2;
    if !ok {
        h.discard(keep.0)?;
        h.discard(keep.1)?;
    }
    Ok(ok)
}

fn same_node(a: RegRef, b: RegRef) -> Result<()> {
    if a.node == b.node {
        Ok(())
    } else {
        Err(Error::MismatchedPartners(format!("{a} and {b} are on different nodes")))
    }
}

fn require_assigned(net: &Net, slots: &[RegRef]) -> Result<()> {
    for &r in slots {
        if !net.is_assigned(r) {
            return Err(Error::SlotEmpty(r.to_string()));
        }
    }
    Ok(())
}

/// Bell measurement on two slots of one register; both slots end empty.
pub fn local_entanglement_swap(net: &Net, a: RegRef, b: RegRef) -> Result<CircuitResult> {
    same_node(a, b)?;
    require_assigned(net, &[a, b])?;
    let (x, z) = swap_ops(&mut net.clone(), a, b)?;
    Ok(CircuitResult::Bits(x, z))
}

/// Entangle the storage slots of `local` and `remote` via the pair held in
/// their comm slots; the comm slots end empty.
pub fn fusion(net: &Net, local: usize, remote: usize, comm: usize, storage: usize) -> Result<CircuitResult> {
    let (su, cu) = (RegRef::new(local, storage), RegRef::new(local, comm));
    let (cv, sv) = (RegRef::new(remote, comm), RegRef::new(remote, storage));
    let paired = net.is_assigned(cu) && net.is_assigned(cv) && net.state_id(cu) == net.state_id(cv);
    if !paired {
        return Err(Error::MissingPair(format!("no shared pair on {cu} and {cv}")));
    }
    require_assigned(net, &[su, sv])?;
    let (m1, m2) = fusion_ops(&mut net.clone(), su, cu, cv, sv)?;
    Ok(CircuitResult::Bits(m1, m2))
}

fn check_pairs(pairs: &[(RegRef, RegRef)]) -> Result<()> {
    let (a0, b0) = pairs[0];
    if a0.node == b0.node {
        return Err(Error::MismatchedPartners(format!("{a0} and {b0} are on one node")));
    }
    for &(a, b) in &pairs[1..] {
        same_node(a0, a)?;
        same_node(b0, b)?;
    }
    Ok(())
}

pub fn purify2to1(net: &Net, ka: RegRef, kb: RegRef, sa: RegRef, sb: RegRef) -> Result<CircuitResult> {
    check_pairs(&[(ka, kb), (sa, sb)])?;
    require_assigned(net, &[ka, kb, sa, sb])?;
    Ok(CircuitResult::Heralded(purify2to1_ops(&mut net.clone(), ka, kb, sa, sb)?))
}

pub fn purify3to1(
    net: &Net,
    lo1: LeaveOut,
    lo2: LeaveOut,
    keep: (RegRef, RegRef),
    sac1: (RegRef, RegRef),
    sac2: (RegRef, RegRef),
) -> Result<CircuitResult> {
    if lo1 == lo2 {
        return Err(Error::InvalidLeaveOut);
    }
    check_pairs(&[keep, sac1, sac2])?;
    require_assigned(net, &[keep.0, keep.1, sac1.0, sac1.1, sac2.0, sac2.1])?;
    Ok(CircuitResult::Heralded(purify3to1_ops(&mut net.clone(), lo1, lo2, keep, sac1, sac2)?))
}

/// Runs a circuit on a dense state with a prescribed outcome sequence,
/// accumulating the probability of that sequence. Measured qubits stay in
/// place (projected), so indices never shift.
pub struct ForcedDense {
    pub state: DenseState,
    forced: Vec<Outcome>,
    cursor: usize,
    pub prob: f64,
    pub discarded: Vec<usize>,
}

impl ForcedDense {
    pub fn new(state: DenseState, forced: Vec<Outcome>) -> Self {
        ForcedDense { state, forced, cursor: 0, prob: 1.0, discarded: Vec::new() }
    }
}

impl QuantumOps for ForcedDense {
    type Q = usize;
    fn gate(&mut self, g: Gate, qs: &[usize]) -> Result<()> {
        self.state.apply_unitary(qs, &g.matrix())
    }
    fn measure_remove(&mut self, q: usize, basis: Basis) -> Result<Outcome> {
        let o = *self.forced.get(self.cursor).ok_or(Error::ImpossibleOutcome)?;
        self.cursor += 1;
        self.prob *= self.state.project(q, basis, o)?;
        Ok(o)
    }
    fn discard(&mut self, q: usize) -> Result<()> {
        self.discarded.push(q);
        Ok(())
    }
}

/// Enumerate all outcome sequences of a circuit making `n_meas` measurements.
/// Returns (probability, circuit result, post-measurement state) for every
/// branch of nonzero probability.
pub fn enumerate_branches<R>(
    initial: &DenseState,
    n_meas: usize,
    circuit: impl Fn(&mut ForcedDense) -> Result<R>,
) -> Result<Vec<(f64, R, DenseState)>> {
    let mut out = Vec::new();
    for bits in 0..(1u32 << n_meas) {
        let forced = (0..n_meas).map(|i| Outcome::from_bit(bits >> (n_meas - 1 - i) & 1 == 1)).collect();
        let mut h = ForcedDense::new(initial.clone(), forced);
        match circuit(&mut h) {
            Ok(r) => out.push((h.prob, r, h.state)),
            Err(Error::ImpossibleOutcome) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Exact success probability and heralded Bell fidelity of a purification
/// circuit acting on the given pair states, kept pair first.
pub fn purification_exact(pairs: &[DenseState], lo: Option<(LeaveOut, LeaveOut)>) -> Result<(f64, f64)> {
    let mut init = pairs[0].clone();
    for p in &pairs[1..] {
        init = init.compose(p);
    }
    let branches = match (pairs.len(), lo) {
        (2, None) => enumerate_branches(&init, 2, |h| purify2to1_ops(h, 0, 1, 2, 3))?,
        (3, Some((l1, l2))) => enumerate_branches(&init, 4, |h| purify3to1_ops(h, l1, l2, (0, 1), (2, 3), (4, 5)))?,
        _ => return Err(Error::ArityMismatch { expected: if lo.is_some() { 3 } else { 2 }, got: pairs.len() }),
    };
    let bell = crate::zoo::states::perfect_pair().ket_vector()?;
    let (mut ps, mut pf) = (0.0, 0.0);
    for (p, ok, st) in branches {
        if ok {
            ps += p;
            pf += p * st.partial_trace(&[0, 1])?.fidelity_with_ket(&bell)?;
        }
    }
    Ok((ps, if ps > 0.0 { pf / ps } else { 0.0 }))
}
