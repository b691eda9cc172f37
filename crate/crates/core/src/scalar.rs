//! Scalar abstraction shared by the geometry and segmentation kernels.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use std::fmt::Debug;

/// Floating point scalar usable by the generic kernels: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative tolerance used for rank tests.
    fn rank_tol() -> Self;
}

impl Real for f32 {
    fn rank_tol() -> Self {
        1e-5
    }
}

impl Real for f64 {
    fn rank_tol() -> Self {
        1e-10
    }
}
