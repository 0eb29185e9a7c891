//! Cosparse analysis compressive sensing with damped generalized approximate
//! message passing.
//!
//! The measurement operator `Φ` and the analysis operator `Ω` are stacked into
//! a single transform `A = [Φ; Ω]`; quadratic losses bind the measurement rows
//! and a scalar regularizer (SNIPE, `ℓ1`, Bernoulli–Gaussian) binds the analysis
//! rows. See [`grampa::solve`] for the entry point.

pub mod denoisers;
pub mod error;
pub mod gamp;
pub mod grampa;
pub mod io;
pub mod linops;
pub mod oracle;
pub mod problems;
pub mod quadrature;

pub use error::{Error, Result};
