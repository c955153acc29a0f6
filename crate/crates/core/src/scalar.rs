use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the numerical core is written against: `f32` or `f64`.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion from an `f64` literal or measurement.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic sigmoid, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert_eq!(sigmoid(800.0f64), 1.0);
        assert!((sigmoid(2.0f32) - 0.880_797).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_symmetry() {
        for &x in &[0.1f64, 1.0, 3.5, 17.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
