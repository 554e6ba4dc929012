//! Numerical workbench for bubble reduction of the critical Choquard equation
//! −Δu − α I_λ[u^p] u^{p−1} − ε k u^{(N+2)/(N−2)} = 0 on R^N.

pub mod bubble;
pub mod error;
pub mod grid;
pub mod identities;
pub mod kcheck;
pub mod linop;
pub mod nonlinear;
pub mod reduction;
pub mod riesz;
pub mod special;

pub use error::{Error, Result};
