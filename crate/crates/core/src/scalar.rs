use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar for the certification math: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Never fails for the supported float types.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Convergence target of iterative solvers: about 2e-9 for `f64`,
    /// 4e-5 for `f32`.
    fn solver_tolerance() -> Self {
        Self::epsilon().sqrt() / Self::lit(8.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
