//! Pattern embedded neural networks (PENNs) for regression and
//! classification with missing covariates.

pub mod algebra;
pub mod datagen;
pub mod eval;
mod error;
pub mod experiment;
pub mod missing;
pub mod nn;
pub mod penn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
