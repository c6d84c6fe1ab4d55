//! Numerical laboratory for boundary-controlled, boundary-noised stochastic
//! heat equations on the unit interval.
//!
//! The crate simulates the controlled state equation in a spectral (Neumann
//! cosine) basis, solves the associated backward adjoint equation by
//! regression Monte Carlo, and checks first-order optimality of controls:
//! spike-perturbation expansion rates, Hamiltonian maximization gaps,
//! duality residuals, and gradient-based / maximization-based optimizers.
//!
//! Layout:
//! - [`spectral`]: eigenbasis, semigroups, boundary influence maps,
//!   pointwise (Nemytskii) nonlinearities via a dealiased midpoint grid.
//! - [`model`]: scenario description, coefficient and cost registries,
//!   hypothesis audits.
//! - [`noise`]: counter-based Gaussian noise, bit-reproducible per
//!   `(seed, path, step)`.
//! - [`forward`]: exponential-Euler forward simulation, first variations,
//!   second-order remainders.
//! - [`adjoint`]: backward regression solver, exact linear oracle, boundary
//!   pairings, terminal-layer regularity profiles.
//! - [`smp`]: spike studies, Hamiltonian checks, duality residuals,
//!   gradients, projected-gradient and maximization-step optimizers.
//! - [`config`] / [`runner`]: line-oriented experiment configs and the
//!   deterministic experiment driver behind the command-line tool.

pub mod adjoint;
pub mod config;
pub mod error;
pub mod forward;
pub mod model;
pub mod noise;
pub mod numfmt;
pub mod par;
pub mod presets;
pub mod runner;
pub mod smp;
pub mod spectral;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
