//! Numerical toolkit for concentration phenomena of semiclassical
//! Schrödinger-type equations and related variational problems.

pub mod ansatz;
pub mod constants;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod expr;
pub mod geodesics;
pub mod grid;
pub mod homoclinic;
pub mod interp;
pub mod linalg;
pub mod problem;
pub mod reduction;
pub mod special;

pub use error::{Error, Result};
