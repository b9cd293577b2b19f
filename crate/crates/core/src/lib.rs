//! Robust and private optimisation of logistic models.

pub mod attacks;
pub mod bounds;
pub mod curvature;
pub mod data;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod optimizer;
pub mod report;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases.
pub type Dataset64 = data::Dataset<f64>;
pub type ModelParams64 = losses::ModelParams<f64>;
pub type LossSpec64 = losses::LossSpec<f64>;
pub type OptimizerConfig64 = optimizer::OptimizerConfig<f64>;
pub type BoundInputs64 = bounds::BoundInputs<f64>;

/// Single-precision aliases.
pub type Dataset32 = data::Dataset<f32>;
pub type ModelParams32 = losses::ModelParams<f32>;
pub type OptimizerConfig32 = optimizer::OptimizerConfig<f32>;
