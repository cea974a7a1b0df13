//! Constraint energy minimizing generalized multiscale finite elements for
//! two-dimensional linear poroelasticity with high-contrast coefficients.

pub mod analysis;
pub mod cem;
pub mod cli;
pub mod error;
pub mod export;
pub mod fem;
pub mod linalg;
pub mod medium;
pub mod mesh;
pub mod ms_solver;
pub mod spectral;

pub use error::{Error, Result};
