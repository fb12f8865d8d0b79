//! Spectral invariants of one-dimensional Schrödinger operators `L = -D² + Q`
//! on a circle of radius `a`, where `Q` is a Hermitian `N×N` matrix potential.
//!
//! The crate computes heat-kernel coefficients symbolically (two independent
//! recursions over noncommutative differential polynomials), evaluates heat
//! traces, zeta functions and zeta-regularized determinants from a plane-wave
//! eigenvalue oracle, compares them with perturbative and resummed closed
//! forms, and integrates the KdV-hierarchy flows whose integrals of motion are
//! the heat invariants.
//!
//! Module map:
//!
//! - [`diffpoly`]: exact noncommutative differential polynomials in `Q`.
//! - [`heatcoeffs`]: heat-kernel coefficients `[a_k]`, `⟨n|a_k⟩`, `W_k`, `A_k`.
//! - [`specfun`]: `θ`, `α`, `f_q` and the quadrature they rest on.
//! - [`oracle`]: plane-wave eigenvalues, heat trace, `ζ`, `B_q`, `log Det`.
//! - [`perturb`]: second-order and leading-derivative spectral forms.
//! - [`kdvflow`]: KdV-hierarchy flows and conservation reports.
//! - [`verify`]: the named cross-validation checks run by `heatkern verify`.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffpoly;
pub mod error;
pub mod heatcoeffs;
pub mod kdvflow;
pub mod oracle;
pub mod periodic;
pub mod perturb;
pub mod quad;
pub mod specfun;
pub mod verify;

pub use error::{Error, Result};
