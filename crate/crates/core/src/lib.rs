//! Predict-and-fix for recurring binary MILPs.
//!
//! A graph network reads each instance of a time series, a recurrent layer
//! carries state across timesteps, and per-variable Beta distributions decide
//! which binaries are confident enough to fix before the residual problem is
//! handed to an exact solver.

pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod featurize;
pub mod harness;
pub mod loss;
pub mod milp;
pub mod model;
pub mod select;
pub mod sparse;

pub use error::{Error, Result};
