//! Estimation and testing of quadratic functionals in a Gaussian sequence
//! model whose eigenvalues are themselves observed with noise.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases at the crate root fix `f64`, with `*32` variants for `f32`.

pub mod config;
pub mod error;
pub mod lower_bounds;
pub mod montecarlo;
pub mod estimator;
pub mod scalar;
pub mod selection;
pub mod sequence_model;
pub mod testing;

pub use error::{Error, Result};
pub use scalar::{compensated_sum, CompensatedSum, Scalar};

pub type Family = sequence_model::SequenceFamily<f64>;
pub type Instance = sequence_model::ProblemInstance<f64>;
pub type Observations = sequence_model::ObservationSet<f64>;
pub type Family32 = sequence_model::SequenceFamily<f32>;
pub type Instance32 = sequence_model::ProblemInstance<f32>;
pub type Observations32 = sequence_model::ObservationSet<f32>;
