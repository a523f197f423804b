//! Pauli strings with an explicit `i^k` phase.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Single-qubit Pauli.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_bits(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    pub fn from_char(c: char) -> Option<Pauli> {
        match c {
            'I' | '_' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Exponent `e` (mod 4) such that `P1 P2 = i^e P3`, with `P3` given by the
/// XOR of the bits. This is the `g` function of the tableau formalism.
pub(crate) fn mul_phase(x1: bool, z1: bool, x2: bool, z2: bool) -> i32 {
    let (x1, z1, x2, z2) = (x1 as i32, z1 as i32, x2 as i32, z2 as i32);
    match (x1, z1) {
        (0, 0) => 0,
        (1, 1) => z2 - x2,
        (1, 0) => z2 * (2 * x2 - 1),
        _ => x2 * (1 - 2 * z2),
    }
}

/// `i^phase * P_0 ⊗ P_1 ⊗ ...`, qubit 0 leftmost.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct PauliString {
    pub x: Vec<bool>,
    pub z: Vec<bool>,
    pub phase: u8,
}

impl PauliString {
    pub fn identity(n: usize) -> Self {
        PauliString { x: vec![false; n], z: vec![false; n], phase: 0 }
    }

    pub fn from_paulis(ps: &[Pauli]) -> Self {
        let (x, z) = ps.iter().map(|p| p.bits()).unzip();
        PauliString { x, z, phase: 0 }
    }

    /// A single Pauli on qubit `q` of an `n`-qubit register.
    pub fn single(n: usize, q: usize, p: Pauli) -> Self {
        let mut s = Self::identity(n);
        let (x, z) = p.bits();
        s.x[q] = x;
        s.z[q] = z;
        s
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn get(&self, q: usize) -> Pauli {
        Pauli::from_bits(self.x[q], self.z[q])
    }

    pub fn set(&mut self, q: usize, p: Pauli) {
        let (x, z) = p.bits();
        self.x[q] = x;
        self.z[q] = z;
    }

    pub fn weight(&self) -> usize {
        self.x.iter().zip(&self.z).filter(|(x, z)| **x || **z).count()
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0
    }

    /// -1 sign for a Hermitian string.
    pub fn is_negative(&self) -> bool {
        self.phase % 4 == 2
    }

    pub fn negated(mut self) -> Self {
        self.phase = (self.phase + 2) % 4;
        self
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let mut parity = false;
        for q in 0..self.len() {
            parity ^= (self.x[q] & other.z[q]) ^ (self.z[q] & other.x[q]);
        }
        !parity
    }

    /// `self * other`, phase tracked exactly.
    pub fn mul(&self, other: &PauliString) -> PauliString {
        assert_eq!(self.len(), other.len(), "pauli length mismatch");
        let mut e = self.phase as i32 + other.phase as i32;
        let mut x = Vec::with_capacity(self.len());
        let mut z = Vec::with_capacity(self.len());
        for q in 0..self.len() {
            e += mul_phase(self.x[q], self.z[q], other.x[q], other.z[q]);
            x.push(self.x[q] ^ other.x[q]);
            z.push(self.z[q] ^ other.z[q]);
        }
        PauliString { x, z, phase: e.rem_euclid(4) as u8 }
    }

    pub fn tensor(&self, other: &PauliString) -> PauliString {
        let mut x = self.x.clone();
        x.extend_from_slice(&other.x);
        let mut z = self.z.clone();
        z.extend_from_slice(&other.z);
        PauliString { x, z, phase: (self.phase + other.phase) % 4 }
    }

    /// Restrict to a subset of qubits (phase kept).
    pub fn select(&self, qubits: &[usize]) -> PauliString {
        PauliString {
            x: qubits.iter().map(|&q| self.x[q]).collect(),
            z: qubits.iter().map(|&q| self.z[q]).collect(),
            phase: self.phase,
        }
    }

    /// Embed into `n` qubits at positions `targets`.
    pub fn embed(&self, n: usize, targets: &[usize]) -> PauliString {
        let mut out = PauliString::identity(n);
        for (i, &t) in targets.iter().enumerate() {
            out.x[t] = self.x[i];
            out.z[t] = self.z[i];
        }
        out.phase = self.phase;
        out
    }

    /// Apply to a big-endian state vector (qubit 0 is the most significant
    /// bit of the index).
    pub fn apply_to_vector(&self, psi: &[C64]) -> Vec<C64> {
        let n = self.len();
        assert_eq!(psi.len(), 1usize << n);
        let mut xmask = 0usize;
        let mut zmask = 0usize;
        let mut ny = 0u32;
        for q in 0..n {
            let bit = 1usize << (n - 1 - q);
            if self.x[q] {
                xmask |= bit;
            }
            if self.z[q] {
                zmask |= bit;
            }
            if self.x[q] && self.z[q] {
                ny += 1;
            }
        }
        let base = i_pow(self.phase as u32 + ny);
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for (b, amp) in psi.iter().enumerate() {
            let sign = if (b & zmask).count_ones() % 2 == 1 { -1.0 } else { 1.0 };
            out[b ^ xmask] += base * sign * amp;
        }
        out
    }

    /// Dense matrix, row-major.
    pub fn to_matrix(&self) -> Vec<C64> {
        let d = 1usize << self.len();
        let mut m = vec![C64::new(0.0, 0.0); d * d];
        for c in 0..d {
            let mut e = vec![C64::new(0.0, 0.0); d];
            e[c] = C64::new(1.0, 0.0);
            let col = self.apply_to_vector(&e);
            for r in 0..d {
                m[r * d + c] = col[r];
            }
        }
        m
    }
}

pub(crate) fn i_pow(k: u32) -> C64 {
    match k % 4 {
        0 => C64::new(1.0, 0.0),
        1 => C64::new(0.0, 1.0),
        2 => C64::new(-1.0, 0.0),
        _ => C64::new(0.0, -1.0),
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prefix = match self.phase % 4 {
            0 => "+",
            1 => "+i",
            2 => "-",
            _ => "-i",
        };
        write!(f, "{prefix}")?;
        for q in 0..self.len() {
            write!(f, "{}", self.get(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (phase, body) = if let Some(r) = s.strip_prefix("-i") {
            (3, r)
        } else if let Some(r) = s.strip_prefix("+i") {
            (1, r)
        } else if let Some(r) = s.strip_prefix('-') {
            (2, r)
        } else if let Some(r) = s.strip_prefix('+') {
            (0, r)
        } else {
            (0, s)
        };
        let ps: Option<Vec<Pauli>> = body.chars().map(Pauli::from_char).collect();
        let ps = ps.ok_or_else(|| Error::InvalidStabilizerGroup(format!("bad pauli string {s:?}")))?;
        if ps.is_empty() {
            return Err(Error::InvalidStabilizerGroup("empty pauli string".into()));
        }
        let mut p = PauliString::from_paulis(&ps);
        p.phase = phase;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_qubit_products() {
        let x: PauliString = "X".parse().unwrap();
        let y: PauliString = "Y".parse().unwrap();
        let z: PauliString = "Z".parse().unwrap();
        assert_eq!(x.mul(&y).to_string(), "+iZ");
        assert_eq!(y.mul(&x).to_string(), "-iZ");
        assert_eq!(z.mul(&x).to_string(), "+iY");
        assert_eq!(y.mul(&y).to_string(), "+I");
    }

    #[test]
    fn matrix_product_matches_symbolic_product() {
        let ps = ["XZ", "-YY", "ZI", "+iXY", "YX"];
        for a in ps {
            for b in ps {
                let pa: PauliString = a.parse().unwrap();
                let pb: PauliString = b.parse().unwrap();
                let ma = pa.to_matrix();
                let mb = pb.to_matrix();
                let d = 4;
                let mut prod = vec![C64::new(0.0, 0.0); 16];
                for r in 0..d {
                    for c in 0..d {
                        for k in 0..d {
                            prod[r * d + c] += ma[r * d + k] * mb[k * d + c];
                        }
                    }
                }
                let expect = pa.mul(&pb).to_matrix();
                for (u, v) in prod.iter().zip(&expect) {
                    assert!((u - v).norm() < 1e-12, "{a}*{b}");
                }
            }
        }
    }

    #[test]
    fn commutation() {
        let a: PauliString = "XX".parse().unwrap();
        let b: PauliString = "ZZ".parse().unwrap();
        let c: PauliString = "ZI".parse().unwrap();
        assert!(a.commutes_with(&b));
        assert!(!a.commutes_with(&c));
    }
}
