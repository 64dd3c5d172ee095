//! Gradient-growth estimator and constructive weak solutions for
//! divergence-form elliptic operators whose coefficients have a square-Dini
//! modulus of continuity at the origin.

pub mod coeffs;
pub mod dynsys;
pub mod error;
pub mod estimator;
pub mod grid;
pub mod linalg;
pub mod ode;
pub mod potential;
pub mod pipeline;
pub mod quadrature;
pub mod scenario;
pub mod sphere;
pub mod suites;

pub use error::{Error, Result};
