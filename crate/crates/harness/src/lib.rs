//! Seeded Monte-Carlo experiments for the analysis-regularized solver.
//!
//! An [`config::ExperimentSpec`] names a problem family, a sweep grid and a
//! trial budget. [`experiment::run_experiment`] draws every trial from a
//! seed derived from the point and trial index, tunes the regularizer
//! parameter, and [`output::write_run`] stores the results.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod ptc;

pub use error::{HarnessError, Result};
