use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar used throughout the metric code: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every finite `f64` has a (possibly rounded)
    /// representation in both implementors.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits in a float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Rounds half away from zero to `decimals` places, treating values within
/// binary representation error of a half as exact halves (so `61.15` stored
/// as `61.1499999...` rounds to `61.2`).
pub(crate) fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let scaled = x.abs() * scale;
    let nudge = 1e-9 * scaled.max(1.0);
    let rounded = (scaled + 0.5 + nudge).floor() / scale;
    rounded.copysign(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_up_rounding() {
        assert_eq!(round_half_up(61.15, 1), 61.2);
        assert_eq!(round_half_up(0.5 * (60.1 + 62.2), 1), 61.2);
        assert_eq!(round_half_up(17.25, 1), 17.3);
        assert_eq!(round_half_up(32.8, 1), 32.8);
        assert_eq!(round_half_up(9.24, 1), 9.2);
        assert_eq!(round_half_up(0.0, 1), 0.0);
        assert_eq!(round_half_up(66.666_666, 1), 66.7);
    }

    #[test]
    fn literal_conversion() {
        assert_eq!(<f32 as Real>::lit(0.5), 0.5f32);
        assert_eq!(<f64 as Real>::from_count(7), 7.0);
    }
}
