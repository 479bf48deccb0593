use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of every numeric buffer.
///
/// Training runs in `f32`; `f64` exists for gradient checks and oracle
/// comparisons.
pub trait Real: Float + Default + Debug + Display + Sum + Send + Sync + 'static {
    /// Width of one value on the wire. Communication is always accounted at
    /// 32-bit precision, whatever the compute precision.
    const WIRE_BYTES: u64 = 4;

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_usize(x: usize) -> Self {
        Self::from_f64(x as f64)
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}
