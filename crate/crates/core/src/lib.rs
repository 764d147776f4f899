//! Factorized causal representation learning for single-cell perturbation
//! data: simulation, model, training, evaluation and dataset I/O.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod math;
pub mod model;
pub mod nn;
pub mod simgen;
pub mod train;

pub use data::{Dataset, GroundTruth, Labels};
pub use error::{FcrError, Result};
pub use math::{DiagGaussian, LatentDims, LatentSample};
pub use model::{FcrModel, ModelConfig};
