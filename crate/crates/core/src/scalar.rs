//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point type the solver can run on.
///
/// Implemented for `f32` and `f64`. All tolerances quoted in the tests are
/// for `f64`; `f32` runs are useful for quick previews only.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Machine epsilon as an `f64`, used when scaling tolerances.
    const EPS_F64: f64;

    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal must be representable")
    }

    /// Converts a count into `Self`.
    #[inline]
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const EPS_F64: f64 = f32::EPSILON as f64;
}

impl Real for f64 {
    const EPS_F64: f64 = f64::EPSILON;
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function via the Lanczos approximation with reflection for `x < 1/2`.
///
/// Relative accuracy is about 1e-15 for `f64` on the positive axis.
pub fn gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        let pi = T::lit(std::f64::consts::PI);
        return pi / ((pi * x).sin() * gamma(T::one() - x));
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS_COEF[0]);
    for (k, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += T::lit(c) / (x + T::count(k));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    let sqrt_two_pi = T::lit((2.0 * std::f64::consts::PI).sqrt());
    sqrt_two_pi * t.powf(x + half) * (-t).exp() * acc
}

/// Plain Euclidean inner product.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_known_values() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        assert_relative_eq!(gamma(1.0_f64), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(2.0_f64), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(1.5_f64), sqrt_pi / 2.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(0.5_f64), sqrt_pi, max_relative = 1e-14);
        assert_relative_eq!(gamma(5.0_f64), 24.0, max_relative = 1e-14);
        // Gamma(1.25), Gamma(1.75) from high-precision tables.
        assert_relative_eq!(gamma(1.25_f64), 0.906_402_477_055_477_0, max_relative = 1e-14);
        assert_relative_eq!(gamma(1.75_f64), 0.919_062_526_848_883_0, max_relative = 1e-14);
    }

    #[test]
    fn gamma_single_precision() {
        assert_relative_eq!(gamma(1.5_f32), 0.886_226_9, max_relative = 1e-6);
    }
}
