//! Covariant phase-space observables in a truncated Fock basis.
//!
//! The crate builds discretized covariant positive operator measures from
//! generating operators, integrates functions against them, derives moment
//! operators both in closed form and by quadrature, quantifies quantization
//! noise, and tests when a positive operator measure is projection valued.

pub mod canonical;
pub mod error;
pub mod fock;
pub mod moments;
pub mod opint;
pub mod povm;
pub mod quad;
pub mod serial;
pub mod spectral;

pub use error::{PsqError, Result};
pub use fock::{GeneratingOperator, StateVector, Tolerances, TruncatedOperator};
