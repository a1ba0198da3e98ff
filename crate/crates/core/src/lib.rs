pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod models;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases used throughout training and the CLI.
pub type Tensor64 = tensor::Tensor<f64>;
pub type PointCloud64 = geometry::PointCloud<f64>;
