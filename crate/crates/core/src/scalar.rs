//! Scalar abstraction: the numeric core is generic over the floating-point
//! type so the same code runs in f32 and f64.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable inside tensors, tapes and the model.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Debug + Display + 'static
{
    /// Lossy conversion from f64, used for constants and configuration values.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Widening conversion to f64 for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting an f64 constant into the active scalar type.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}
