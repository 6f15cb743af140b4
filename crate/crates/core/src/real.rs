//! Scalar abstraction shared by the numeric kernels.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the latency, potential and learning kernels.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    /// Lossy conversion from `f64`; every supported scalar can represent the
    /// magnitudes that appear in scenario files.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is convertible to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real is convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
