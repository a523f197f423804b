use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};
use crate::symbolics::SymState;

/// (|00> + |11>)/sqrt(2).
pub fn perfect_pair() -> SymState {
    (SymState::z1().tensor(&SymState::z1()) + SymState::z2().tensor(&SymState::z2())) / 2f64.sqrt()
}

/// The stabilizer form of the Bell pair used by default for link generation.
pub fn perfect_pair_stabilizer() -> SymState {
    SymState::stabilizer("ZZ XX").expect("valid generators")
}

/// F |Phi+><Phi+| + (1-F) I/4.
pub fn depolarized_pair(f: f64) -> Result<SymState> {
    if !(0.0..=1.0).contains(&f) || f.is_nan() {
        return Err(Error::InvalidWeight(format!("pair fidelity {f} outside [0,1]")));
    }
    Ok(f * perfect_pair().projector() + (1.0 - f) * SymState::MaximallyMixed(2))
}

/// Stand-in for a physical link model: a depolarized pair whose Bell-state
/// visibility equals `efficiency`, so F = (1 + 3 efficiency)/4. This is not a
/// model of any particular heralding scheme.
pub fn noisy_pair_surrogate(efficiency: f64) -> Result<SymState> {
    if !(0.0..=1.0).contains(&efficiency) || efficiency.is_nan() {
        return Err(Error::InvalidWeight(format!("efficiency {efficiency} outside [0,1]")));
    }
    depolarized_pair(efficiency)
}

/// Werner pair with Bell fidelity `f`.
pub fn werner_pair(f: f64) -> Result<SymState> {
    if !(0.25..=1.0).contains(&f) {
        return Err(Error::InvalidWeight(format!("Werner fidelity {f} outside [1/4,1]")));
    }
    depolarized_pair((4.0 * f - 1.0) / 3.0)
}

/// Stabilizer generators of the graph state on `n` vertices: X_v times Z on
/// every neighbour.
pub fn graph_state_generators(n: usize, edges: &[(usize, usize)]) -> Vec<PauliString> {
    (0..n)
        .map(|v| {
            let mut p = PauliString::single(n, v, Pauli::X);
            for &(a, b) in edges {
                let other = if a == v {
                    b
                } else if b == v {
                    a
                } else {
                    continue;
                };
                p = p.mul(&PauliString::single(n, other, Pauli::Z));
            }
            p
        })
        .collect()
}

pub fn graph_state(n: usize, edges: &[(usize, usize)]) -> SymState {
    SymState::Stabilizer(graph_state_generators(n, edges))
}

/// Look up a named entry, e.g. `perfect_pair` or `depolarized_pair(0.9)`.
pub fn lookup(name: &str) -> Result<SymState> {
    let name = name.trim();
    let (head, arg) = match name.split_once('(') {
        Some((h, rest)) => {
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| Error::Config(format!("unbalanced parentheses in {name:?}")))?;
            let v: f64 = inner
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad numeric argument in {name:?}")))?;
            (h.trim(), Some(v))
        }
        None => (name, None),
    };
    match (head, arg) {
        ("perfect_pair", None) => Ok(perfect_pair()),
        ("perfect_pair_stabilizer", None) => Ok(perfect_pair_stabilizer()),
        ("depolarized_pair", Some(f)) => depolarized_pair(f),
        ("noisy_pair_surrogate", Some(e)) => noisy_pair_surrogate(e),
        ("werner_pair", Some(f)) => werner_pair(f),
        _ => match head.strip_prefix("stabilizer:") {
            Some(gens) => SymState::stabilizer(gens),
            None => Err(Error::Config(format!("unknown state {name:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_pair_is_bell() {
        let psi = perfect_pair().ket_vector().unwrap();
        let r = 0.5f64.sqrt();
        assert!((psi[0].re - r).abs() < 1e-15 && (psi[3].re - r).abs() < 1e-15);
        assert!(psi[1].norm() < 1e-15 && psi[2].norm() < 1e-15);
    }

    #[test]
    fn depolarized_pair_fidelity() {
        let rho = depolarized_pair(0.99).unwrap().express_dense().unwrap();
        let f = rho.fidelity_with_ket(&perfect_pair().ket_vector().unwrap()).unwrap();
        // F + (1-F)/4 overlap from the identity part
        assert!((f - (0.99 + 0.01 / 4.0)).abs() < 1e-12);
        assert!(depolarized_pair(1.2).is_err());
    }

    #[test]
    fn lookup_names() {
        assert_eq!(lookup("perfect_pair").unwrap(), perfect_pair());
        assert_eq!(lookup("depolarized_pair(0.9)").unwrap(), depolarized_pair(0.9).unwrap());
        assert!(lookup("bogus").is_err());
        assert_eq!(lookup("stabilizer:XX ZZ").unwrap(), SymState::stabilizer("XX ZZ").unwrap());
    }

    #[test]
    fn werner_and_surrogate_fidelities() {
        let bell = perfect_pair().ket_vector().unwrap();
        for f in [0.6, 0.8, 0.95] {
            let rho = werner_pair(f).unwrap().express_dense().unwrap();
            assert!((rho.fidelity_with_ket(&bell).unwrap() - f).abs() < 1e-12);
        }
        let rho = noisy_pair_surrogate(0.5).unwrap().express_dense().unwrap();
        assert!((rho.fidelity_with_ket(&bell).unwrap() - 0.625).abs() < 1e-12);
    }
}
