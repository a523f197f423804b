//! Dense qubit states.
//!
//! A state stays a ket for as long as only unitaries and projective
//! measurements touch it, and is promoted to a density matrix the first time a
//! non-unitary channel or a partial trace of an entangled qubit needs one.
//! Index order is big-endian: qubit 0 is the most significant bit.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;

use super::{Basis, Outcome};
use crate::error::{Error, Result};
use crate::pauli::PauliString;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Clone, Debug, PartialEq)]
pub enum Repr {
    Ket(Vec<C64>),
    /// Row-major `d x d`.
    Rho(Vec<C64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    n: usize,
    repr: Repr,
}

/// Square complex matrix acting on `k` qubits, row-major.
pub type Matrix = Vec<C64>;

/// Apply `m` (on `targets`) to the vector stored at `data[offset + stride*i]`.
fn apply_local(data: &mut [C64], offset: usize, stride: usize, n: usize, targets: &[usize], m: &[C64]) {
    let k = targets.len();
    let dk = 1usize << k;
    debug_assert_eq!(m.len(), dk * dk);
    let masks: Vec<usize> = targets.iter().map(|&t| 1usize << (n - 1 - t)).collect();
    let tmask: usize = masks.iter().sum();
    let mut idx = vec![0usize; dk];
    let mut buf = vec![ZERO; dk];
    for base in 0..(1usize << n) {
        if base & tmask != 0 {
            continue;
        }
        for (j, slot) in idx.iter_mut().enumerate() {
            let mut b = base;
            for (i, mask) in masks.iter().enumerate() {
                if (j >> (k - 1 - i)) & 1 == 1 {
                    b |= mask;
                }
            }
            *slot = offset + stride * b;
        }
        for (j, &i) in idx.iter().enumerate() {
            buf[j] = data[i];
        }
        for (r, &i) in idx.iter().enumerate() {
            let row = &m[r * dk..(r + 1) * dk];
            data[i] = row.iter().zip(&buf).map(|(a, b)| a * b).sum();
        }
    }
}

fn conj(m: &[C64]) -> Matrix {
    m.iter().map(|c| c.conj()).collect()
}

fn ket_of(basis: Basis, outcome: Outcome) -> [C64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let plus = outcome == Outcome::Plus;
    match (basis, plus) {
        (Basis::Z, true) => [ONE, ZERO],
        (Basis::Z, false) => [ZERO, ONE],
        (Basis::X, true) => [C64::new(h, 0.0), C64::new(h, 0.0)],
        (Basis::X, false) => [C64::new(h, 0.0), C64::new(-h, 0.0)],
        (Basis::Y, true) => [C64::new(h, 0.0), C64::new(0.0, h)],
        (Basis::Y, false) => [C64::new(h, 0.0), C64::new(0.0, -h)],
    }
}

fn projector(basis: Basis, outcome: Outcome) -> Matrix {
    let e = ket_of(basis, outcome);
    vec![e[0] * e[0].conj(), e[0] * e[1].conj(), e[1] * e[0].conj(), e[1] * e[1].conj()]
}

impl DenseState {
    /// `|0...0>`.
    pub fn zero(n: usize) -> Self {
        let mut v = vec![ZERO; 1 << n];
        v[0] = ONE;
        DenseState { n, repr: Repr::Ket(v) }
    }

    pub fn from_ket(psi: Vec<C64>) -> Result<Self> {
        let n = log2_exact(psi.len())?;
        Ok(DenseState { n, repr: Repr::Ket(psi) })
    }

    pub fn from_rho(rho: Vec<C64>) -> Result<Self> {
        let d = (rho.len() as f64).sqrt().round() as usize;
        if d * d != rho.len() {
            return Err(Error::DimMismatch(format!("{} entries is not a square matrix", rho.len())));
        }
        let n = log2_exact(d)?;
        Ok(DenseState { n, repr: Repr::Rho(rho) })
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        let mut rho = vec![ZERO; d * d];
        for i in 0..d {
            rho[i * d + i] = C64::new(1.0 / d as f64, 0.0);
        }
        DenseState { n, repr: Repr::Rho(rho) }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn repr(&self) -> &Repr {
        &self.repr
    }

    pub fn is_ket(&self) -> bool {
        matches!(self.repr, Repr::Ket(_))
    }

    pub fn memory_bytes(&self) -> usize {
        let len = match &self.repr {
            Repr::Ket(v) | Repr::Rho(v) => v.len(),
        };
        len * std::mem::size_of::<C64>()
    }

    /// Density matrix, row-major.
    pub fn to_rho(&self) -> Matrix {
        match &self.repr {
            Repr::Rho(r) => r.clone(),
            Repr::Ket(v) => {
                let d = v.len();
                let mut r = vec![ZERO; d * d];
                for i in 0..d {
                    for j in 0..d {
                        r[i * d + j] = v[i] * v[j].conj();
                    }
                }
                r
            }
        }
    }

    pub fn promote(&mut self) {
        if self.is_ket() {
            self.repr = Repr::Rho(self.to_rho());
        }
    }

    fn check_targets(&self, targets: &[usize], k: usize) -> Result<()> {
        if targets.len() != k {
            return Err(Error::ArityMismatch { expected: k, got: targets.len() });
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= self.n || targets[..i].contains(&t) {
                return Err(Error::DimMismatch(format!("bad target {t} for {} qubits", self.n)));
            }
        }
        Ok(())
    }

    /// Apply a `2^k x 2^k` operator without renormalizing: `A psi` or `A rho A^dag`.
    pub fn apply_operator(&mut self, targets: &[usize], m: &[C64]) -> Result<()> {
        let k = log2_exact((m.len() as f64).sqrt().round() as usize)?;
        self.check_targets(targets, k)?;
        let n = self.n;
        let d = self.dim();
        match &mut self.repr {
            Repr::Ket(v) => apply_local(v, 0, 1, n, targets, m),
            Repr::Rho(r) => {
                for c in 0..d {
                    apply_local(r, c, d, n, targets, m);
                }
                let mc = conj(m);
                for row in 0..d {
                    apply_local(r, row * d, 1, n, targets, &mc);
                }
            }
        }
        Ok(())
    }

    pub fn apply_unitary(&mut self, targets: &[usize], u: &[C64]) -> Result<()> {
        self.apply_operator(targets, u)
    }

    /// `rho -> sum_k K rho K^dag`.
    pub fn apply_kraus(&mut self, targets: &[usize], kraus: &[Matrix]) -> Result<()> {
        self.promote();
        let Repr::Rho(rho) = &self.repr else { unreachable!() };
        let mut acc = vec![ZERO; rho.len()];
        for k in kraus {
            let mut branch = DenseState { n: self.n, repr: Repr::Rho(rho.clone()) };
            branch.apply_operator(targets, k)?;
            let Repr::Rho(b) = branch.repr else { unreachable!() };
            for (a, x) in acc.iter_mut().zip(b) {
                *a += x;
            }
        }
        self.repr = Repr::Rho(acc);
        Ok(())
    }

    pub fn apply_pauli(&mut self, p: &PauliString) -> Result<()> {
        if p.len() != self.n {
            return Err(Error::ArityMismatch { expected: self.n, got: p.len() });
        }
        match &mut self.repr {
            Repr::Ket(v) => *v = p.apply_to_vector(v),
            Repr::Rho(_) => {
                let targets: Vec<usize> = (0..self.n).collect();
                self.apply_operator(&targets, &p.to_matrix())?;
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            Repr::Ket(v) => v.iter().map(|a| a.norm_sqr()).sum(),
            Repr::Rho(r) => {
                let d = self.dim();
                (0..d).map(|i| r[i * d + i].re).sum()
            }
        }
    }

    fn scale(&mut self, f: f64) {
        match &mut self.repr {
            Repr::Ket(v) => v.iter_mut().for_each(|a| *a *= f.sqrt()),
            Repr::Rho(r) => r.iter_mut().for_each(|a| *a *= f),
        }
    }

    /// Probability of `outcome` when measuring `target` in `basis`.
    pub fn probability(&self, target: usize, basis: Basis, outcome: Outcome) -> Result<f64> {
        let mut c = self.clone();
        c.apply_operator(&[target], &projector(basis, outcome))?;
        Ok(c.trace() / self.trace())
    }

    /// Project onto `outcome`, renormalize, return its probability.
    pub fn project(&mut self, target: usize, basis: Basis, outcome: Outcome) -> Result<f64> {
        let before = self.trace();
        let mut c = self.clone();
        c.apply_operator(&[target], &projector(basis, outcome))?;
        let p = c.trace() / before;
        if p < 1e-12 {
            return Err(Error::ImpossibleOutcome);
        }
        c.scale(1.0 / c.trace());
        *self = c;
        Ok(p)
    }

    pub fn measure(&mut self, target: usize, basis: Basis, rng: &mut impl Rng) -> Result<(Outcome, f64)> {
        let p_plus = self.probability(target, basis, Outcome::Plus)?;
        let outcome = if rng.random::<f64>() < p_plus { Outcome::Plus } else { Outcome::Minus };
        let p = self.project(target, basis, outcome)?;
        Ok((outcome, p))
    }

    /// Remove a qubit known to be in the `basis`/`outcome` eigenstate.
    pub fn remove_eigen_qubit(&mut self, target: usize, basis: Basis, outcome: Outcome) -> Result<()> {
        self.check_targets(&[target], 1)?;
        let e = ket_of(basis, outcome);
        let n = self.n;
        let bitpos = n - 1 - target;
        let reduce = |i: usize, b: usize| -> usize {
            let hi = i >> bitpos;
            let lo = i & ((1 << bitpos) - 1);
            (((hi << 1) | b) << bitpos) | lo
        };
        let dn = 1usize << (n - 1);
        self.repr = match &self.repr {
            Repr::Ket(v) => {
                Repr::Ket((0..dn).map(|i| e[0].conj() * v[reduce(i, 0)] + e[1].conj() * v[reduce(i, 1)]).collect())
            }
            Repr::Rho(r) => {
                let d = self.dim();
                let mut out = vec![ZERO; dn * dn];
                for i in 0..dn {
                    for j in 0..dn {
                        let mut s = ZERO;
                        for a in 0..2 {
                            for b in 0..2 {
                                s += e[a].conj() * r[reduce(i, a) * d + reduce(j, b)] * e[b];
                            }
                        }
                        out[i * dn + j] = s;
                    }
                }
                Repr::Rho(out)
            }
        };
        self.n -= 1;
        Ok(())
    }

    /// Reduced state on `keep`, in the given order.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DenseState> {
        if keep.is_empty() {
            return Err(Error::EmptyKeep);
        }
        for (i, &q) in keep.iter().enumerate() {
            if q >= self.n || keep[..i].contains(&q) {
                return Err(Error::DimMismatch(format!("bad keep index {q}")));
            }
        }
        let n = self.n;
        let env: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
        let compose = |k: usize, e: usize| -> usize {
            let mut idx = 0usize;
            for (i, &q) in keep.iter().enumerate() {
                if (k >> (keep.len() - 1 - i)) & 1 == 1 {
                    idx |= 1 << (n - 1 - q);
                }
            }
            for (i, &q) in env.iter().enumerate() {
                if (e >> (env.len() - 1 - i)) & 1 == 1 {
                    idx |= 1 << (n - 1 - q);
                }
            }
            idx
        };
        let dk = 1usize << keep.len();
        let de = 1usize << env.len();
        let table: Vec<Vec<usize>> = (0..dk).map(|k| (0..de).map(|e| compose(k, e)).collect()).collect();
        let d = self.dim();
        let mut out = vec![ZERO; dk * dk];
        for i in 0..dk {
            for j in 0..dk {
                let mut s = ZERO;
                for e in 0..de {
                    let (a, b) = (table[i][e], table[j][e]);
                    s += match &self.repr {
                        Repr::Ket(v) => v[a] * v[b].conj(),
                        Repr::Rho(r) => r[a * d + b],
                    };
                }
                out[i * dk + j] = s;
            }
        }
        Ok(DenseState { n: keep.len(), repr: Repr::Rho(out) })
    }

    /// `self ⊗ other`.
    pub fn compose(&self, other: &DenseState) -> DenseState {
        match (&self.repr, &other.repr) {
            (Repr::Ket(a), Repr::Ket(b)) => {
                let v = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
                DenseState { n: self.n + other.n, repr: Repr::Ket(v) }
            }
            _ => {
                let (ra, rb) = (self.to_rho(), other.to_rho());
                let (da, db) = (self.dim(), other.dim());
                let d = da * db;
                let mut r = vec![ZERO; d * d];
                for i1 in 0..da {
                    for j1 in 0..da {
                        let x = ra[i1 * da + j1];
                        if x == ZERO {
                            continue;
                        }
                        for i2 in 0..db {
                            for j2 in 0..db {
                                r[(i1 * db + i2) * d + j1 * db + j2] = x * rb[i2 * db + j2];
                            }
                        }
                    }
                }
                DenseState { n: self.n + other.n, repr: Repr::Rho(r) }
            }
        }
    }

    /// `<psi|rho|psi>` for a normalized pure target.
    pub fn fidelity_with_ket(&self, psi: &[C64]) -> Result<f64> {
        if psi.len() != self.dim() {
            return Err(Error::DimMismatch(format!("target has dim {}, state {}", psi.len(), self.dim())));
        }
        let f = match &self.repr {
            Repr::Ket(v) => v.iter().zip(psi).map(|(a, b)| b.conj() * a).sum::<C64>().norm_sqr(),
            Repr::Rho(r) => {
                let d = self.dim();
                let mut s = ZERO;
                for i in 0..d {
                    for j in 0..d {
                        s += psi[i].conj() * r[i * d + j] * psi[j];
                    }
                }
                s.re
            }
        };
        Ok(f)
    }

    pub fn expectation(&self, p: &PauliString) -> f64 {
        match &self.repr {
            Repr::Ket(v) => {
                let pv = p.apply_to_vector(v);
                v.iter().zip(&pv).map(|(a, b)| a.conj() * b).sum::<C64>().re
            }
            Repr::Rho(r) => {
                let m = p.to_matrix();
                let d = self.dim();
                let mut s = ZERO;
                for i in 0..d {
                    for k in 0..d {
                        s += m[i * d + k] * r[k * d + i];
                    }
                }
                s.re
            }
        }
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.to_rho())
    }

    /// Largest deviation of `rho` from `rho^dag`.
    pub fn hermiticity_error(&self) -> f64 {
        let r = self.to_rho();
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                worst = worst.max((r[i * d + j] - r[j * d + i].conj()).norm());
            }
        }
        worst
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = self.to_matrix();
        let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        m.symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn trace_distance(&self, other: &DenseState) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::DimMismatch(format!("{} vs {} qubits", self.n, other.n)));
        }
        let diff = self.to_matrix() - other.to_matrix();
        let diff = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
        Ok(0.5 * diff.symmetric_eigenvalues().iter().map(|x| x.abs()).sum::<f64>())
    }
}

fn log2_exact(d: usize) -> Result<usize> {
    if d == 0 || !d.is_power_of_two() {
        return Err(Error::DimMismatch(format!("dimension {d} is not a power of two")));
    }
    Ok(d.trailing_zeros() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::gates;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn removing_a_middle_qubit_keeps_the_others() {
        for rho in [false, true] {
            let mut psi = vec![ZERO; 8];
            psi[0b101] = ONE;
            let mut s = DenseState::from_ket(psi).unwrap();
            if rho {
                s.promote();
            }
            s.remove_eigen_qubit(1, Basis::Z, Outcome::Plus).unwrap();
            let mut want = vec![ZERO; 4];
            want[0b11] = ONE;
            assert!((s.fidelity_with_ket(&want).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    fn bell() -> DenseState {
        let mut s = DenseState::zero(2);
        s.apply_unitary(&[0], &gates::h()).unwrap();
        s.apply_unitary(&[0, 1], &gates::cnot()).unwrap();
        s
    }

    #[test]
    fn bell_state_and_reduced_state() {
        let s = bell();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = vec![C64::new(h, 0.0), ZERO, ZERO, C64::new(h, 0.0)];
        assert!((s.fidelity_with_ket(&psi).unwrap() - 1.0).abs() < 1e-12);
        let r = s.partial_trace(&[1]).unwrap();
        let want = DenseState::maximally_mixed(1);
        assert!(r.trace_distance(&want).unwrap() < 1e-12);
    }

    #[test]
    fn ket_and_rho_paths_agree() {
        let mut a = bell();
        let mut b = bell();
        b.promote();
        for s in [&mut a, &mut b] {
            s.apply_unitary(&[1], &gates::s()).unwrap();
            s.apply_unitary(&[0, 1], &gates::cz()).unwrap();
        }
        assert!(a.trace_distance(&b).unwrap() < 1e-12);
    }

    #[test]
    fn project_impossible_outcome() {
        let mut s = DenseState::zero(1);
        assert_eq!(s.project(0, Basis::Z, Outcome::Minus), Err(Error::ImpossibleOutcome));
    }

    #[test]
    fn measure_and_remove_keeps_partner() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = bell();
        let (o, p) = s.measure(0, Basis::Z, &mut rng).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        s.remove_eigen_qubit(0, Basis::Z, o).unwrap();
        assert_eq!(s.num_qubits(), 1);
        assert!((s.probability(0, Basis::Z, o).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partial_trace_permutes() {
        let mut s = DenseState::zero(2);
        s.apply_unitary(&[1], &gates::x()).unwrap();
        let r = s.partial_trace(&[1, 0]).unwrap();
        assert!((r.expectation(&"ZI".parse().unwrap()) + 1.0).abs() < 1e-12);
        assert!(matches!(s.partial_trace(&[]), Err(Error::EmptyKeep)));
    }
}
