pub mod analytics;
pub mod engine;
pub mod error;
pub mod fabric;
pub mod graph;
pub mod nn;
pub mod partition;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Matrix;
