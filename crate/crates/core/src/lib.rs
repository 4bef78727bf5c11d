//! Adaptive sequential Monte Carlo for the Bayesian elliptic inverse problem.
//!
//! The permeability `u(x)` of a Darcy flow on `[-π/2, π/2]^d` is parameterized by a
//! truncated real Fourier expansion with independent `U[-1, 1]` coefficients. Noisy
//! point observations of the pressure define a posterior over those coefficients,
//! which [`smc::run`] explores by tempering from the prior with ESS-targeted
//! temperatures, multinomial resampling and adaptive reflective random-walk
//! Metropolis moves.
//!
//! Modules:
//! - [`field`]: prior parameterization, sampling and evaluation.
//! - [`pde`]: discretization, linear solve and the forward map.
//! - [`model`]: data sets, misfit, tempering weights, synthetic data.
//! - [`smc`]: the sampler.
//! - [`validation`]: analytic targets and convergence diagnostics.
//! - [`io`]: CSV import/export.

pub mod error;
pub mod field;
pub mod io;
pub mod model;
pub mod pde;
pub mod rng;
pub mod smc;
pub mod validation;

pub use error::{Error, Result};
