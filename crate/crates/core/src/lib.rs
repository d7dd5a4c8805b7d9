//! Numerical laboratory for steady Stokes flow with rigid inclusions: cell
//! correctors, extended fluxes, effective viscosity, two-scale convergence
//! studies, large-scale regularity probes and ensemble statistics in 2D.

pub mod corrector;
pub mod effective;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod homog;
pub mod io;
pub mod regularity;
pub mod solver;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};

/// Version of the numerical core, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
