//! Numerical laboratory for the invariant measures of stochastically forced
//! passive scalars on the 2-torus.
//!
//! The scalar solves `df + (u·∇f − νΔf) dt = √ν Ψ dW` on a truncated real
//! Fourier basis. The crate assembles the Galerkin operators, solves for the
//! exact stationary covariance, integrates the SDE by Monte Carlo and provides
//! spectral diagnostics of the inviscid transport `∂t f + u·∇f = 0`.
//!
//! - [`fourier`]: fields, Sobolev norms, projections, grid sampling
//! - [`flows`]: shear, cellular and custom divergence-free velocities
//! - [`operators`]: advection/dissipation/generator matrices and semigroups
//! - [`spectral`]: eigendecomposition, growth probes, low-mode averages
//! - [`covariance`]: Lyapunov and quadrature covariances, shear limit
//! - [`sim`]: ensemble simulation and energy balance

pub mod covariance;
pub mod error;
pub mod flows;
pub mod fourier;
pub mod linalg;
pub mod operators;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};

/// Formats a double with 17 significant digits, which round-trips exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}
