//! Convex least squares estimation of densities and regression functions,
//! the invelope process describing their limit behaviour on linear regions,
//! and a Monte Carlo calibrated test of linearity.

pub mod error;
pub mod estimator;
pub mod experiments;
pub mod invelope;
pub mod lintest;
pub mod pwl;
pub mod stochastic;

pub use error::{Error, Result};
