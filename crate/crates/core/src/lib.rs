//! Covariant phase observables on a truncated Fock space.

pub mod angle;
pub mod config;
pub mod couplings;
pub mod error;
pub mod fock;
pub mod homodyne;
pub mod instruments;
pub mod linalg;
pub mod par;
pub mod phase;
pub mod phase_space;
pub mod quadrature;
pub mod special;
pub mod verify;

pub use error::{Error, Result};

/// Complex double used throughout.
pub type C64 = num_complex::Complex64;
