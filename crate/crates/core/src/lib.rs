//! Structure-preserving nonlinear model predictive control on smooth manifolds.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gmres;
pub mod hemisphere;
pub mod horizon;
pub mod integrators;
pub mod linalg;
pub mod simulation;
pub mod solver;

pub use error::{Error, Result};
