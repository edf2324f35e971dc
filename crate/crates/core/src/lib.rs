//! Population-mean inference under missing-at-random nonresponse.
//!
//! The estimator pipeline: kernel ridge imputation with gradient-based sparse
//! covariate selection ([`kernel`], [`select`]), group-lasso logistic
//! propensity scores ([`propensity`]), an augmented inverse probability
//! weighting combination with a plug-in variance ([`estimators`]), plus
//! seeded data generators ([`simgen`]) and a Monte Carlo benchmark harness
//! ([`harness`]).

pub mod error;
pub mod harness;
pub mod io;
pub mod estimators;
pub mod kernel;
mod linalg;
pub mod propensity;
pub mod select;
pub mod simgen;

pub use error::{Error, Result};
