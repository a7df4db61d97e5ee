//! Thin wrappers over `libm` so the crate builds without `std` and produces
//! bit-identical floating-point results on every platform.

#[inline(always)]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline(always)]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline(always)]
pub fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[inline(always)]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline(always)]
pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline(always)]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline(always)]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline(always)]
pub fn atan2(y: f64, x: f64) -> f64 {
    libm::atan2(y, x)
}

#[inline(always)]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline(always)]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// `x^n` for small non-negative integer exponents by binary exponentiation.
#[inline]
pub fn ipow(x: f64, n: u32) -> f64 {
    let mut base = x;
    let mut exp = n;
    let mut acc = 1.0;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= base;
        }
        base *= base;
        exp >>= 1;
    }
    acc
}

/// `|x|^(2 sigma)` given `|x|^2`, taking the exact integer-power path when
/// `sigma` is a small integer.
#[inline]
pub fn pow_sigma(norm_sqr: f64, sigma: f64) -> f64 {
    if let Some(k) = as_small_integer(sigma) {
        ipow(norm_sqr, k)
    } else {
        powf(norm_sqr, sigma)
    }
}

/// Returns `Some(n)` when `x` is exactly a small non-negative integer.
#[inline]
pub fn as_small_integer(x: f64) -> Option<u32> {
    if x >= 0.0 && x <= 64.0 && x == round(x) {
        Some(x as u32)
    } else {
        None
    }
}

pub const TWO_PI: f64 = core::f64::consts::TAU;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ipow_matches_repeated_multiplication() {
        assert_eq!(ipow(3.0, 0), 1.0);
        assert_eq!(ipow(3.0, 1), 3.0);
        assert_eq!(ipow(3.0, 4), 81.0);
        assert_eq!(ipow(1.5, 3), 1.5 * 1.5 * 1.5);
    }

    #[test]
    fn pow_sigma_integer_path_is_exact() {
        let rho = 1.7;
        assert_eq!(pow_sigma(rho, 2.0), rho * rho);
        assert_eq!(pow_sigma(rho, 3.0), rho * rho * rho);
        let frac = pow_sigma(rho, 2.5);
        assert!((frac - powf(rho, 2.5)).abs() == 0.0);
    }

    #[test]
    fn small_integer_detection() {
        assert_eq!(as_small_integer(2.0), Some(2));
        assert_eq!(as_small_integer(3.0), Some(3));
        assert_eq!(as_small_integer(2.5), None);
        assert_eq!(as_small_integer(-2.0), None);
    }
}
