//! Solvers for the 1D focusing nonlinear Schrödinger equation with a
//! multiplicative, Stratonovich-coupled random forcing that is white in time
//! and correlated in space.
//!
//! The crate provides the building blocks for desk-scale experiments:
//!
//! * [`grid`] — non-uniform 1D meshes with Neumann pseudo-points, the
//!   three-point second-difference operator and quadrature weights;
//! * [`noise`] — four spatial covariance models (two diagonal eigenvalue
//!   decays, Riesz and exponential kernels), their Cholesky factors and the
//!   per-step noise sampler;
//! * [`rng`] — counter-based Gaussian streams that are bit-reproducible
//!   across platforms and thread counts;
//! * [`schemes`] — the three implicit midpoint schemes (mass-energy
//!   conservative, Crank-Nicolson, linear extrapolation);
//! * [`observables`] — discrete mass/energy, the focusing scale `L`, the
//!   focusing parameter `a`, and rescaled core profiles;
//! * [`refine`] — sup-norm adaptive time steps and mass-conservative spatial
//!   mesh refinement;
//! * [`bounds`] — closed-form upper bounds on the expected discrete energy
//!   for comparison against Monte Carlo means.
//!
//! Everything here is `no_std` (with `alloc`); IO, configuration and the
//! command-line front end live in the companion `snls-cli` crate.

#![cfg_attr(not(any(test, doctest)), no_std)]
// `!(x > 0.0)` guards are deliberate: they reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bounds;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod math;
pub mod noise;
pub mod observables;
pub mod refine;
pub mod rng;
pub mod schemes;

pub use error::{Error, Result};
pub use grid::{Grid, State};
pub use noise::{CovarianceFactor, NoiseKind, NoiseModel};
pub use rng::NoiseStream;
pub use schemes::{Scheme, SchemeConfig, StepContext};

/// Complex field value, re-exported so downstream crates agree on the type.
pub type Complex64 = num_complex::Complex<f64>;
