use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type of every tensor and model in this crate.
///
/// Implemented for `f32` (artifact precision) and `f64` (oracle precision);
/// the blanket bound set keeps generic numeric code free of per-type
/// special cases.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for literals and sampled noise.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Lossy widening to `f64`, for 64-bit loss accumulation.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real widens to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for `T::from_f64_lossy` at call sites dense with literals.
pub(crate) fn real<T: Real>(v: f64) -> T {
    T::from_f64_lossy(v)
}
