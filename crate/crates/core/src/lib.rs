//! Detection of threshold-induced manipulation in longitudinal panels of a
//! running variable.
//!
//! The pipeline turns dated measurements into annualized-change intervals
//! ([`panel`]), fits difference-in-differences and within-person models with
//! cluster-robust inference ([`estimators`]), runs the named analysis recipes
//! and placebo-threshold sweeps on top of them ([`did`]), tests the running
//! variable's density for a discontinuity ([`density`]), and provides a
//! seeded cohort simulator with injectable ground truth ([`synthgen`]).

pub mod density;
pub mod describe;
pub mod did;
pub mod error;
pub mod estimators;
pub mod panel;
pub mod par;
pub mod stats;
pub mod synthgen;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
