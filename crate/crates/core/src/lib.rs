//! Lattice statics of anti-plane screw dislocations: far-field predictors,
//! energy-difference minimisation and decay analysis.

pub mod analysis;
pub mod energy;
pub mod error;
pub mod lattice;
pub mod numeric;
pub mod potentials;
pub mod predictor;
pub mod solve;
pub mod sparse;
pub mod tensors;

pub use error::{Error, Result};
