//! Single- and multi-qubit noise channels.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::dense::Matrix;
use crate::error::{Error, Result};
use crate::pauli::{Pauli, PauliString};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Channel {
    /// `rho -> (1-p) rho + p I/2`
    Depolarize(f64),
    /// `rho -> (1-p) rho + p Z rho Z`
    Dephase(f64),
    /// Energy relaxation with decay probability `gamma`.
    AmplitudeDamp(f64),
    /// Weighted Pauli strings; weights sum to one.
    PauliMixture(Vec<(f64, String)>),
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidWeight(format!("{what} parameter {p} outside [0, 1]")));
    }
    Ok(())
}

fn scaled(m: Matrix, f: f64) -> Matrix {
    m.into_iter().map(|c| c * f).collect()
}

impl Channel {
    pub fn arity(&self) -> usize {
        match self {
            Channel::PauliMixture(terms) => terms.first().map_or(1, |(_, s)| {
                s.trim_start_matches(['+', '-', 'i']).chars().count()
            }),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Channel::Depolarize(p) | Channel::Dephase(p) | Channel::AmplitudeDamp(p) => check_prob(*p, "channel"),
            Channel::PauliMixture(terms) => {
                let mut total = 0.0;
                for (w, s) in terms {
                    check_prob(*w, "pauli weight")?;
                    let _: PauliString = s.parse()?;
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidWeight(format!("pauli weights sum to {total}")));
                }
                Ok(())
            }
        }
    }

    pub fn kraus(&self) -> Result<Vec<Matrix>> {
        self.validate()?;
        Ok(match self {
            Channel::AmplitudeDamp(g) => {
                let k0 = vec![C64::new(1., 0.), C64::new(0., 0.), C64::new(0., 0.), C64::new((1. - g).sqrt(), 0.)];
                let k1 = vec![C64::new(0., 0.), C64::new(g.sqrt(), 0.), C64::new(0., 0.), C64::new(0., 0.)];
                vec![k0, k1]
            }
            _ => self
                .pauli_terms()?
                .0
                .into_iter()
                .filter(|(w, _)| *w > 0.0)
                .map(|(w, p)| scaled(p.to_matrix(), w.sqrt()))
                .collect(),
        })
    }

    /// Pauli-twirled form. The flag is false when twirling changed the
    /// channel (only amplitude damping here).
    pub fn pauli_terms(&self) -> Result<(Vec<(f64, PauliString)>, bool)> {
        self.validate()?;
        let one = |p: Pauli| PauliString::from_paulis(&[p]);
        Ok(match self {
            Channel::Depolarize(p) => (
                vec![
                    (1.0 - 0.75 * p, one(Pauli::I)),
                    (p / 4.0, one(Pauli::X)),
                    (p / 4.0, one(Pauli::Y)),
                    (p / 4.0, one(Pauli::Z)),
                ],
                true,
            ),
            Channel::Dephase(p) => (vec![(1.0 - p, one(Pauli::I)), (*p, one(Pauli::Z))], true),
            Channel::AmplitudeDamp(g) => {
                let pxy = g / 4.0;
                let pz = (2.0 - g - 2.0 * (1.0 - g).sqrt()) / 4.0;
                (
                    vec![
                        (1.0 - 2.0 * pxy - pz, one(Pauli::I)),
                        (pxy, one(Pauli::X)),
                        (pxy, one(Pauli::Y)),
                        (pz, one(Pauli::Z)),
                    ],
                    false,
                )
            }
            Channel::PauliMixture(terms) => {
                let parsed: Result<Vec<_>> = terms.iter().map(|(w, s)| Ok((*w, s.parse::<PauliString>()?))).collect();
                (parsed?, true)
            }
        })
    }
}

/// Kraus completeness `sum K^dag K = I`, within `tol`.
pub fn is_trace_preserving(kraus: &[Matrix], tol: f64) -> bool {
    let Some(first) = kraus.first() else { return false };
    let d = (first.len() as f64).sqrt().round() as usize;
    for i in 0..d {
        for j in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for k in kraus {
                for r in 0..d {
                    s += k[r * d + i].conj() * k[r * d + j];
                }
            }
            let want = if i == j { 1.0 } else { 0.0 };
            if (s - C64::new(want, 0.0)).norm() > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::dense::DenseState;
    use crate::backends::gates;
    use crate::backends::{Basis, Outcome};

    #[test]
    fn kraus_sets_are_complete() {
        for ch in [
            Channel::Depolarize(0.3),
            Channel::Dephase(0.2),
            Channel::AmplitudeDamp(0.4),
            Channel::PauliMixture(vec![(0.5, "XZ".into()), (0.5, "II".into())]),
        ] {
            assert!(is_trace_preserving(&ch.kraus().unwrap(), 1e-12), "{ch:?}");
        }
    }

    #[test]
    fn amplitude_damping_decays_excited_population() {
        let mut s = DenseState::zero(1);
        s.apply_unitary(&[0], &gates::x()).unwrap();
        s.apply_kraus(&[0], &Channel::AmplitudeDamp(0.3).kraus().unwrap()).unwrap();
        assert!((s.probability(0, Basis::Z, Outcome::Minus).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn twirled_damping_is_a_distribution() {
        let (terms, exact) = Channel::AmplitudeDamp(0.36).pauli_terms().unwrap();
        assert!(!exact);
        let total: f64 = terms.iter().map(|t| t.0).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(terms.iter().all(|t| t.0 >= 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Channel::Depolarize(1.5).validate().is_err());
        assert!(Channel::PauliMixture(vec![(0.3, "X".into())]).validate().is_err());
    }
}
