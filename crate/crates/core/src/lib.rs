// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod perturbation;
pub mod prognostic;
pub mod synth;
pub mod thermo;
pub mod transfer;
pub mod unification;

pub use error::{Error, ErrorClass, Result};
