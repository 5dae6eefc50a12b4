//! Numerical laboratory for concentrating solutions of
//!
//! ```text
//! -eps^2 Δu + V(x) u = K(x) u^p + Q(x) u^sigma,   u > 0,   u -> 0 at infinity,
//! ```
//!
//! with `sigma = (N+2)/(N-2)` the critical Sobolev exponent and `Q(0) = 0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`potential`]: closed-form coefficient families `V`, `K`, `Q` and hypothesis checks.
//! * [`ground_state`]: the radial ground state `U` of `-ΔU + U = U^p` by shooting, and
//!   the landscape constants built from its moments.
//! * [`landscape`]: the auxiliary function `Γ = C1 Γ1 - C2 Γ2`, derivatives and critical points.
//! * [`grid`] and [`functional`]: box discretization, quadrature, the energy `f_eps` with
//!   gradient and Hessian action, and the frozen functional.
//! * [`ansatz`]: the explicit almost-solutions `z_ξ` and their tangent vectors.
//! * [`reduction`]: the Lyapunov-Schmidt correction `w(eps, ξ)`, reduced functional `Φ_eps`
//!   and spectral diagnostics.
//! * [`solver`]: full Newton-Krylov solves, peak localisation, concentration sweeps.
//! * [`convergence`]: log-log order fits used by every asymptotic check.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ansatz;
pub mod convergence;
mod error;
pub mod functional;
pub mod ground_state;
pub mod grid;
pub mod krylov;
pub mod landscape;
pub mod model;
pub mod potential;
pub mod reduction;
pub mod region;
pub mod solver;

pub use error::{Error, Hypothesis, Result};
pub use model::Model;

