pub mod backends;
pub mod engine;
pub mod error;
pub mod gf2;
pub mod mbqc;
pub mod metrics;
pub mod net;
pub mod pauli;
pub mod protocols;
pub mod qtcp;
pub mod scenario;
pub mod symbolics;
pub mod tagquery;
pub mod tags;
pub mod zoo;

pub use error::{Error, Result};
