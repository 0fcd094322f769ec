//! Generalised Hilbertian Covariance Measure: a conditional independence
//! test for functional data built from ridge-regression residuals.

pub mod applications;
pub mod error;
pub mod funcsample;
pub mod ghcm;
pub mod quadform;
pub mod regression;
pub mod simulate;

pub use error::{GhcmError, Result};
