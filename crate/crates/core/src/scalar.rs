use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar for pixel and signal arithmetic.
///
/// Implemented for `f32` and `f64`. Numeric kernels are generic over
/// `Real`; statistics that feed reports are accumulated in `f64`
/// regardless of the storage scalar so that corpus numbers stay
/// comparable across precisions.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    /// Narrowing conversion from an `f64` constant.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Real")
    }

    /// Widening conversion to `f64`.
    #[inline]
    fn widen(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Clamp to the unit interval.
    #[inline]
    fn unit(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else if self > Self::one() {
            Self::one()
        } else {
            self
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
