use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Floating-point type usable for state amplitudes.
pub trait Real:
    Float + NumAssign + FromPrimitive + NumCast + Default + Send + Sync + Debug + Display + 'static
{
    /// Tolerance used for unitarity and norm checks at this precision.
    const TOL: f64;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        NumCast::from(self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const TOL: f64 = 1e-5;
}

impl Real for f64 {
    const TOL: f64 = 1e-12;
}
