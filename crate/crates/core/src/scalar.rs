//! Scalar abstraction shared by the estimation math.
//!
//! Everything that touches poses, residuals and the optimizer is written
//! against [`Real`], so the same code runs on `f32` and `f64`.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the geometry and graph modules.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Default {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("scalar conversion from f64")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
