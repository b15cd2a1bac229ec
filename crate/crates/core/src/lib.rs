//! Spectral tools for the decay of small perturbations in compressible MHD.
//!
//! The crate is layered bottom-up:
//!
//! - [`spectral`]: periodic lattices, Fourier transforms and multipliers.
//! - [`littlewood_paley`]: dyadic blocks, Besov and Chemin–Lerner norms.
//! - [`ensemble`]: seeded random band-limited fields.
//! - [`bony`]: paraproducts and the randomized inequality harness.
//! - [`model`]: the perturbation state and its nonlinear source terms.
//! - [`linear`]: symbol matrices, propagators and the continuum quadrature oracle.
//! - [`integrator`]: time stepping of the full nonlinear system.
//! - [`decay`]: rate formulas, exponent fits and monitors.
//! - [`cli`]: configuration files and experiment drivers.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bony;
pub mod cli;
pub mod decay;
pub mod ensemble;
pub mod linear;
pub mod error;
pub mod integrator;
pub mod littlewood_paley;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
