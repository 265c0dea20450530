//! Quasi-stationary (Yaglom) limits of substochastic nearest-neighbour chains
//! on the integers.
//!
//! The crate evolves conditioned laws `K^n(x, .) / K^n(x, S)` by renormalized
//! power iteration, estimates the spectral radius, evaluates the closed-form
//! invariant measures of the two-sided walk, builds h-transforms and time
//! reversals, and checks the hypotheses under which Yaglom limits exist.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod conditions;
pub mod error;
pub mod evolve;
pub mod export;
pub mod extrapolate;
pub mod measures;
pub mod montecarlo;
pub mod scenarios;
pub mod spectral;
pub mod transforms;

pub use chain::{kernel_step, MassState, NNKernel, Region, StepKernel, StepLaw, Violation, Window};
pub use error::{Error, Result};

/// Integer site of the state space.
pub type Site = i64;
