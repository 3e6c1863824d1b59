//! Directed polymers in an i.i.d. random environment on `Z^d`.
//!
//! The crate evolves normalised partition functions with the discrete
//! stochastic heat recursion, computes exact small-instance and renewal
//! moments, and estimates tail, overshoot, localisation and fluctuation
//! statistics by Monte Carlo.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod env;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod field;
pub mod numeric;
pub mod rng;
pub mod spine;
pub mod stats;
pub mod walk;

pub use env::EnvModel;
pub use error::{Error, Result};
pub use walk::{RenewalTable, WalkKernel};
