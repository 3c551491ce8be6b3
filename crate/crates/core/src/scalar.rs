//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt;

use nalgebra::RealField;
use num_traits::ToPrimitive;

/// Floating point scalar accepted by models, sensitivities and solvers: `f32` or `f64`.
pub trait Real: RealField + Copy + ToPrimitive + fmt::Display + fmt::LowerExp + 'static {
    /// Converts an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        nalgebra::convert(v)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Base step used by central finite differences.
    fn fd_step() -> Self {
        let eps = Self::default_epsilon();
        if eps < Self::lit(1e-10) {
            Self::lit(1e-6)
        } else {
            eps.cbrt()
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
