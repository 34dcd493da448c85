//! Bandit-based hyperparameter tuning for stochastic gradient MCMC.
//!
//! Competing sampler configurations ("arms") run under a shared budget. Each
//! arm is scored by a Stein discrepancy between its samples and the target,
//! and successive halving prunes the worst arms until one remains.
//!
//! Numerical code is generic over [`Real`] (`f32` / `f64`); the aliases at
//! the crate root fix the common `f64` instantiations.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod samplers;
pub mod scalar;
pub mod stein;

pub use error::{Error, Result};
pub use scalar::{BudgetScalar, Real};

/// Seeded random stream owned by each chain.
pub type ChainRng = rand_chacha::ChaCha8Rng;

pub type GaussianModel = model::GaussianConjugate<f64>;
pub type LogisticModel = model::LogisticRegression<f64>;
pub type Map = model::MapResult<f64>;
