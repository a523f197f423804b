use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::dense::Matrix;

fn m(entries: &[(f64, f64)]) -> Matrix {
    entries.iter().map(|&(re, im)| C64::new(re, im)).collect()
}

pub fn x() -> Matrix {
    m(&[(0., 0.), (1., 0.), (1., 0.), (0., 0.)])
}
pub fn y() -> Matrix {
    m(&[(0., 0.), (0., -1.), (0., 1.), (0., 0.)])
}
pub fn z() -> Matrix {
    m(&[(1., 0.), (0., 0.), (0., 0.), (-1., 0.)])
}
pub fn h() -> Matrix {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    m(&[(r, 0.), (r, 0.), (r, 0.), (-r, 0.)])
}
pub fn s() -> Matrix {
    m(&[(1., 0.), (0., 0.), (0., 0.), (0., 1.)])
}
pub fn sdg() -> Matrix {
    m(&[(1., 0.), (0., 0.), (0., 0.), (0., -1.)])
}
pub fn t() -> Matrix {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    m(&[(1., 0.), (0., 0.), (0., 0.), (r, r)])
}
pub fn cnot() -> Matrix {
    let mut u = vec![C64::new(0.0, 0.0); 16];
    for (r, c) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
        u[r * 4 + c] = C64::new(1.0, 0.0);
    }
    u
}
pub fn cz() -> Matrix {
    let mut u = vec![C64::new(0.0, 0.0); 16];
    for i in 0..4 {
        u[i * 4 + i] = C64::new(if i == 3 { -1.0 } else { 1.0 }, 0.0);
    }
    u
}
pub fn swap() -> Matrix {
    let mut u = vec![C64::new(0.0, 0.0); 16];
    for (r, c) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
        u[r * 4 + c] = C64::new(1.0, 0.0);
    }
    u
}

/// Named gates. All but `T` are Clifford.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    X,
    Y,
    Z,
    H,
    S,
    Sdg,
    T,
    CNOT,
    CZ,
    SWAP,
}

impl Gate {
    pub fn arity(self) -> usize {
        match self {
            Gate::CNOT | Gate::CZ | Gate::SWAP => 2,
            _ => 1,
        }
    }

    pub fn is_clifford(self) -> bool {
        self != Gate::T
    }

    pub fn matrix(self) -> Matrix {
        match self {
            Gate::X => x(),
            Gate::Y => y(),
            Gate::Z => z(),
            Gate::H => h(),
            Gate::S => s(),
            Gate::Sdg => sdg(),
            Gate::T => t(),
            Gate::CNOT => cnot(),
            Gate::CZ => cz(),
            Gate::SWAP => swap(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gate::X => "X",
            Gate::Y => "Y",
            Gate::Z => "Z",
            Gate::H => "H",
            Gate::S => "S",
            Gate::Sdg => "Sdg",
            Gate::T => "T",
            Gate::CNOT => "CNOT",
            Gate::CZ => "CZ",
            Gate::SWAP => "SWAP",
        }
    }

    pub fn dagger(self) -> Option<Gate> {
        match self {
            Gate::S => Some(Gate::Sdg),
            Gate::Sdg => Some(Gate::S),
            Gate::T => None,
            g => Some(g),
        }
    }
}
