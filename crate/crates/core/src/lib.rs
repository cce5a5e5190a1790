//! Two-block James-Stein shrinkage for linear prediction.
//!
//! The crate fits a candidate model whose regressors are split into two
//! blocks, shrinks each block towards zero by a data-driven amount, estimates
//! the resulting mean squared prediction error (MSPE) from the training
//! sample alone, and selects among candidate models by that estimate.
//! Alongside the estimators it provides:
//!
//! * [`mspe`]: the exact conditional MSPE under a Gaussian design and its
//!   sample-based estimate;
//! * [`inference`]: prediction intervals and their exact conditional coverage;
//! * [`bounds`]: closed-form concentration bounds, evaluated in log space so
//!   that values far below `f64::MIN_POSITIVE` keep their logarithm;
//! * [`harness`]: deterministic, parallel Monte Carlo checks of those bounds
//!   and of the finite-sample distributions the estimators rely on;
//! * [`cli`]: the command-line front end used by the `blockstein` binary.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod inference;
pub mod mspe;
pub mod numerics;
pub mod selection;
pub mod shrinkage;

pub use error::{Error, Result};
