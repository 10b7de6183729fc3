//! Single-index importance sampling for rare-event probabilities and tail
//! expectations `μ = E[Ψ(X)]`.
//!
//! The estimators reduce a high-dimensional problem to a one-dimensional index
//! `T = βᵀX_c`, importance-sample `T` from a calibrated proposal, and draw the
//! remaining inputs conditionally on `T`.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod density1d;
pub mod error;
pub mod estimators;
pub mod models;
pub mod pipeline;
pub mod rng;
mod sum;

pub use error::{Result, SisError};
