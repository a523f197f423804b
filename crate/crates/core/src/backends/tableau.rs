//! Stabilizer tableau with destabilizers (Aaronson-Gottesman).
//!
//! Rows `0..n` are destabilizers, rows `n..2n` stabilizers. Each row is a
//! Pauli string with a real sign, bit-packed into `u64` words.

use num_complex::Complex64 as C64;
use rand::Rng;

use super::Basis;
use crate::error::{Error, Result};
use crate::gf2;
use crate::pauli::{mul_phase, PauliString};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tableau {
    n: usize,
    words: usize,
    xs: Vec<u64>,
    zs: Vec<u64>,
    signs: Vec<bool>,
}

#[inline]
fn bit(v: &[u64], q: usize) -> bool {
    (v[q / 64] >> (q % 64)) & 1 == 1
}

#[inline]
fn flip(v: &mut [u64], q: usize) {
    v[q / 64] ^= 1 << (q % 64);
}

#[inline]
fn put(v: &mut [u64], q: usize, b: bool) {
    if bit(v, q) != b {
        flip(v, q);
    }
}

/// Phase of `(xi, zi, si) * (xh, zh, sh)` written back into `h`.
fn mul_rows(hx: &mut [u64], hz: &mut [u64], hs: &mut bool, ix: &[u64], iz: &[u64], is: bool) {
    let mut e: i32 = 2 * (*hs as i32) + 2 * (is as i32);
    for w in 0..hx.len() {
        let mut both = (ix[w] | iz[w]) & (hx[w] | hz[w]);
        while both != 0 {
            let b = both.trailing_zeros() as u64;
            both &= both - 1;
            let g = |v: u64| (v >> b) & 1 == 1;
            e += mul_phase(g(ix[w]), g(iz[w]), g(hx[w]), g(hz[w]));
        }
        hx[w] ^= ix[w];
        hz[w] ^= iz[w];
    }
    *hs = e.rem_euclid(4) == 2;
}

impl Tableau {
    /// `|0...0>`.
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        let mut t = Tableau { n, words, xs: vec![0; 2 * n * words], zs: vec![0; 2 * n * words], signs: vec![false; 2 * n] };
        for q in 0..n {
            flip(t.row_x_mut(q), q);
            flip(t.row_z_mut(n + q), q);
        }
        t
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    fn row_x(&self, r: usize) -> &[u64] {
        &self.xs[r * self.words..(r + 1) * self.words]
    }
    fn row_z(&self, r: usize) -> &[u64] {
        &self.zs[r * self.words..(r + 1) * self.words]
    }
    fn row_x_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.xs[r * self.words..(r + 1) * self.words]
    }
    fn row_z_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.zs[r * self.words..(r + 1) * self.words]
    }

    fn row_pauli(&self, r: usize) -> PauliString {
        let x = (0..self.n).map(|q| bit(self.row_x(r), q)).collect();
        let z = (0..self.n).map(|q| bit(self.row_z(r), q)).collect();
        PauliString { x, z, phase: if self.signs[r] { 2 } else { 0 } }
    }

    fn set_row(&mut self, r: usize, p: &PauliString) {
        for q in 0..self.n {
            put(self.row_x_mut(r), q, p.x[q]);
            put(self.row_z_mut(r), q, p.z[q]);
        }
        self.signs[r] = p.is_negative();
    }

    /// row h <- row i * row h
    fn rowsum(&mut self, h: usize, i: usize) {
        let ix = self.row_x(i).to_vec();
        let iz = self.row_z(i).to_vec();
        let is = self.signs[i];
        let w = self.words;
        let mut hs = self.signs[h];
        let (xs, zs) = (&mut self.xs, &mut self.zs);
        mul_rows(&mut xs[h * w..(h + 1) * w], &mut zs[h * w..(h + 1) * w], &mut hs, &ix, &iz, is);
        self.signs[h] = hs;
    }

    pub fn stabilizers(&self) -> Vec<PauliString> {
        (self.n..2 * self.n).map(|r| self.row_pauli(r)).collect()
    }

    pub fn destabilizers(&self) -> Vec<PauliString> {
        (0..self.n).map(|r| self.row_pauli(r)).collect()
    }

    pub fn h(&mut self, a: usize) {
        for r in 0..2 * self.n {
            let (x, z) = (bit(self.row_x(r), a), bit(self.row_z(r), a));
            self.signs[r] ^= x & z;
            put(self.row_x_mut(r), a, z);
            put(self.row_z_mut(r), a, x);
        }
    }

    pub fn s(&mut self, a: usize) {
        for r in 0..2 * self.n {
            let (x, z) = (bit(self.row_x(r), a), bit(self.row_z(r), a));
            self.signs[r] ^= x & z;
            put(self.row_z_mut(r), a, z ^ x);
        }
    }

    pub fn sdg(&mut self, a: usize) {
        self.s(a);
        self.s(a);
        self.s(a);
    }

    pub fn x(&mut self, a: usize) {
        for r in 0..2 * self.n {
            self.signs[r] ^= bit(self.row_z(r), a);
        }
    }

    pub fn z(&mut self, a: usize) {
        for r in 0..2 * self.n {
            self.signs[r] ^= bit(self.row_x(r), a);
        }
    }

    pub fn y(&mut self, a: usize) {
        for r in 0..2 * self.n {
            self.signs[r] ^= bit(self.row_x(r), a) ^ bit(self.row_z(r), a);
        }
    }

    pub fn cnot(&mut self, c: usize, t: usize) {
        assert_ne!(c, t, "cnot control equals target");
        for r in 0..2 * self.n {
            let (xc, zc) = (bit(self.row_x(r), c), bit(self.row_z(r), c));
            let (xt, zt) = (bit(self.row_x(r), t), bit(self.row_z(r), t));
            self.signs[r] ^= xc & zt & !(xt ^ zc);
            put(self.row_x_mut(r), t, xt ^ xc);
            put(self.row_z_mut(r), c, zc ^ zt);
        }
    }

    pub fn cz(&mut self, a: usize, b: usize) {
        self.h(b);
        self.cnot(a, b);
        self.h(b);
    }

    pub fn swap(&mut self, a: usize, b: usize) {
        self.cnot(a, b);
        self.cnot(b, a);
        self.cnot(a, b);
    }

    /// Multiply the state by a Pauli (acting on all `n` qubits).
    pub fn apply_pauli(&mut self, p: &PauliString) {
        assert_eq!(p.len(), self.n);
        for r in 0..2 * self.n {
            let mut anti = false;
            for q in 0..self.n {
                anti ^= (bit(self.row_x(r), q) & p.z[q]) ^ (bit(self.row_z(r), q) & p.x[q]);
            }
            self.signs[r] ^= anti;
        }
    }

    /// Outcome of a Z measurement if it is determined: `Some(true)` means
    /// the -1 eigenvalue.
    pub fn peek_z(&self, a: usize) -> Option<bool> {
        if (self.n..2 * self.n).any(|r| bit(self.row_x(r), a)) {
            return None;
        }
        let mut sx = vec![0u64; self.words];
        let mut sz = vec![0u64; self.words];
        let mut ss = false;
        for i in 0..self.n {
            if bit(self.row_x(i), a) {
                let r = i + self.n;
                mul_rows(&mut sx, &mut sz, &mut ss, self.row_x(r), self.row_z(r), self.signs[r]);
            }
        }
        Some(ss)
    }

    /// Measure Z on `a`, collapsing the state. `forced` picks the outcome of
    /// a random measurement; a forced outcome that contradicts a
    /// deterministic one is an error. Returns (outcome bit, probability).
    pub fn measure_z_with(&mut self, a: usize, forced: Option<bool>, rng: &mut impl Rng) -> Result<(bool, f64)> {
        let n = self.n;
        let Some(p) = (n..2 * n).find(|&r| bit(self.row_x(r), a)) else {
            let det = self.peek_z(a).expect("deterministic branch");
            if forced.is_some_and(|f| f != det) {
                return Err(Error::ImpossibleOutcome);
            }
            return Ok((det, 1.0));
        };
        for i in 0..2 * n {
            if i != p && bit(self.row_x(i), a) {
                self.rowsum(i, p);
            }
        }
        let row = self.row_pauli(p);
        self.set_row(p - n, &row);
        let outcome = forced.unwrap_or_else(|| rng.random::<bool>());
        let w = self.words;
        self.xs[p * w..(p + 1) * w].fill(0);
        self.zs[p * w..(p + 1) * w].fill(0);
        flip(self.row_z_mut(p), a);
        self.signs[p] = outcome;
        Ok((outcome, 0.5))
    }

    pub fn measure_z(&mut self, a: usize, rng: &mut impl Rng) -> bool {
        self.measure_z_with(a, None, rng).expect("unforced measurement cannot fail").0
    }

    /// Measure in any Pauli basis; the qubit is left in the observed
    /// eigenstate of that basis.
    pub fn measure(&mut self, a: usize, basis: Basis, forced: Option<bool>, rng: &mut impl Rng) -> Result<(bool, f64)> {
        self.rotate_to_z(a, basis);
        let res = self.measure_z_with(a, forced, rng);
        self.rotate_from_z(a, basis);
        res
    }

    pub(crate) fn rotate_to_z(&mut self, a: usize, basis: Basis) {
        match basis {
            Basis::Z => {}
            Basis::X => self.h(a),
            Basis::Y => {
                self.sdg(a);
                self.h(a);
            }
        }
    }

    pub(crate) fn rotate_from_z(&mut self, a: usize, basis: Basis) {
        match basis {
            Basis::Z => {}
            Basis::X => self.h(a),
            Basis::Y => {
                self.h(a);
                self.s(a);
            }
        }
    }

    /// `<P>` for a Hermitian Pauli: 0 or +-1.
    pub fn expectation(&self, p: &PauliString) -> f64 {
        assert_eq!(p.len(), self.n);
        let stabs = self.stabilizers();
        if stabs.iter().any(|s| !s.commutes_with(p)) {
            return 0.0;
        }
        let mut acc = PauliString::identity(self.n);
        for (i, d) in self.destabilizers().iter().enumerate() {
            if !d.commutes_with(p) {
                acc = acc.mul(&stabs[i]);
            }
        }
        debug_assert_eq!((&acc.x, &acc.z), (&p.x, &p.z));
        // acc = i^(acc.phase) P0, p = i^(p.phase) P0
        match (acc.phase as i32 - p.phase as i32).rem_euclid(4) {
            0 => 1.0,
            2 => -1.0,
            _ => 0.0,
        }
    }

    /// Direct sum: `self ⊗ other`.
    pub fn compose(&self, other: &Tableau) -> Tableau {
        let n = self.n + other.n;
        let mut t = Tableau::new(n);
        let pad = |p: PauliString, left: usize, right: usize| {
            PauliString::identity(left).tensor(&p).tensor(&PauliString::identity(right))
        };
        let (d1, s1) = (self.destabilizers(), self.stabilizers());
        let (d2, s2) = (other.destabilizers(), other.stabilizers());
        for (i, p) in d1.into_iter().enumerate() {
            t.set_row(i, &pad(p, 0, other.n));
        }
        for (i, p) in d2.into_iter().enumerate() {
            t.set_row(self.n + i, &pad(p, self.n, 0));
        }
        for (i, p) in s1.into_iter().enumerate() {
            t.set_row(n + i, &pad(p, 0, other.n));
        }
        for (i, p) in s2.into_iter().enumerate() {
            t.set_row(n + self.n + i, &pad(p, self.n, 0));
        }
        t
    }

    /// Build from `n` independent commuting generators with real signs.
    pub fn from_stabilizers(gens: &[PauliString]) -> Result<Tableau> {
        let n = gens.first().map_or(0, |g| g.len());
        if gens.iter().any(|g| g.len() != n) {
            return Err(Error::InvalidStabilizerGroup("generators act on different numbers of qubits".into()));
        }
        if gens.len() != n {
            return Err(Error::RankMismatch { generators: gens.len(), qubits: n });
        }
        if gens.iter().any(|g| g.phase % 2 == 1) {
            return Err(Error::InvalidStabilizerGroup("imaginary sign".into()));
        }
        for i in 0..n {
            for j in i + 1..n {
                if !gens[i].commutes_with(&gens[j]) {
                    return Err(Error::InvalidStabilizerGroup(format!("{} and {} anticommute", gens[i], gens[j])));
                }
            }
        }
        let rows: Vec<gf2::Row> = gens.iter().map(|g| [g.x.clone(), g.z.clone()].concat()).collect();
        if gf2::rank(&rows) != n {
            return Err(Error::InvalidStabilizerGroup("generators are not independent".into()));
        }
        // destabilizer D_i: symplectic product with S_j is delta_ij
        let sym: Vec<gf2::Row> = gens.iter().map(|g| [g.z.clone(), g.x.clone()].concat()).collect();
        let mut destabs = Vec::with_capacity(n);
        for i in 0..n {
            let rhs: Vec<bool> = (0..n).map(|j| j == i).collect();
            let v = gf2::solve(&sym, &rhs).expect("full-rank system is solvable");
            destabs.push(PauliString { x: v[..n].to_vec(), z: v[n..].to_vec(), phase: 0 });
        }
        for i in 0..n {
            for j in i + 1..n {
                if !destabs[i].commutes_with(&destabs[j]) {
                    let mut fixed = destabs[j].mul(&gens[i]);
                    fixed.phase = 0;
                    destabs[j] = fixed;
                }
            }
        }
        let mut t = Tableau::new(n);
        for i in 0..n {
            t.set_row(i, &destabs[i]);
            t.set_row(n + i, &gens[i]);
        }
        Ok(t)
    }

    /// Measure `a` in Z and delete it. Returns the outcome bit.
    pub fn remove_qubit(&mut self, a: usize, rng: &mut impl Rng) -> bool {
        let outcome = self.measure_z(a, rng);
        self.drop_z_eigen_qubit(a);
        outcome
    }

    /// Delete `a`, which must already be in a Z eigenstate.
    pub fn drop_z_eigen_qubit(&mut self, a: usize) {
        let mut stabs = self.stabilizers();
        let k = stabs.iter().position(|s| s.z[a] && !s.x[a]).expect("qubit is a Z eigenstate");
        let pivot = stabs[k].clone();
        for (i, s) in stabs.iter_mut().enumerate() {
            if i != k && s.z[a] {
                *s = s.mul(&pivot);
            }
        }
        stabs.remove(k);
        let keep: Vec<usize> = (0..self.n).filter(|&q| q != a).collect();
        let reduced: Vec<PauliString> = stabs.iter().map(|s| s.select(&keep)).collect();
        *self = if reduced.is_empty() {
            Tableau::new(0)
        } else {
            Tableau::from_stabilizers(&reduced).expect("reduced generators stay valid")
        };
    }

    /// Reduced row echelon form of the stabilizer group; equal for equal
    /// groups regardless of generator choice.
    pub fn canonical(&self) -> Vec<PauliString> {
        canonical_form(&self.stabilizers())
    }

    pub fn same_state(&self, other: &Tableau) -> bool {
        self.n == other.n && self.canonical() == other.canonical()
    }

    /// Normalized state vector, big-endian. Global phase is arbitrary.
    pub fn to_state_vector(&self) -> Vec<C64> {
        assert!(self.n <= 20, "state vector of {} qubits is too large", self.n);
        // a computational basis state with nonzero overlap
        let mut probe = self.clone();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut b = 0usize;
        for q in 0..self.n {
            let (bit, _) = probe
                .measure_z_with(q, Some(false), &mut rng)
                .or_else(|_| probe.measure_z_with(q, Some(true), &mut rng))
                .expect("one outcome is possible");
            if bit {
                b |= 1 << (self.n - 1 - q);
            }
        }
        let mut psi = vec![C64::new(0.0, 0.0); 1 << self.n];
        psi[b] = C64::new(1.0, 0.0);
        for s in self.stabilizers() {
            let sp = s.apply_to_vector(&psi);
            for (a, b) in psi.iter_mut().zip(sp) {
                *a = (*a + b) * 0.5;
            }
        }
        let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        psi.iter().map(|a| a / norm).collect()
    }
}

/// Row-reduce a set of commuting generators, tracking signs.
pub fn canonical_form(gens: &[PauliString]) -> Vec<PauliString> {
    let mut rows = gens.to_vec();
    let Some(n) = rows.first().map(|r| r.len()) else { return rows };
    let mut r = 0;
    for col in 0..2 * n {
        let get = |p: &PauliString| if col < n { p.x[col] } else { p.z[col - n] };
        let Some(piv) = (r..rows.len()).find(|&i| get(&rows[i])) else { continue };
        rows.swap(r, piv);
        for i in 0..rows.len() {
            if i != r && get(&rows[i]) {
                rows[i] = rows[i].mul(&rows[r]);
            }
        }
        r += 1;
        if r == rows.len() {
            break;
        }
    }
    rows
}
