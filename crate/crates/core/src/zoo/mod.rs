//! Reference states and the standard local circuits.

pub mod circuits;
pub mod states;

pub use circuits::{CircuitResult, LeaveOut, QuantumOps};
