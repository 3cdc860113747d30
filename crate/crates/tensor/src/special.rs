//! Error function and its inverse.

use crate::error::{Result, TensorError};

/// 2/√π
pub const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Gauss error function, accurate to about one ulp.
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

/// Complementary error function `1 - erf(x)`, without cancellation for large `x`.
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Derivative of [`erf`].
pub fn erf_derivative(x: f64) -> f64 {
    FRAC_2_SQRT_PI * (-x * x).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`erf`] on the open interval (-1, 1).
///
/// A rational starting guess is refined by safeguarded Newton steps on
/// `erf(x) - p`. The bracket `[lo, hi]` always contains the root, so a
/// Newton step that leaves it falls back to bisection.
pub fn ierf(p: f64) -> Result<f64> {
    if !(p.abs() < 1.0) {
        return Err(TensorError::domain(
            "ierf",
            format!("argument {p} outside the open interval (-1, 1)"),
        ));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let q = p.abs();

    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while erf(hi) < q {
        lo = hi;
        hi *= 2.0;
    }

    let mut x = initial_guess(q).clamp(lo, hi);
    for _ in 0..200 {
        let f = erf(x) - q;
        if f == 0.0 {
            break;
        }
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let slope = erf_derivative(x);
        let mut next = x - f / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 2.0 * f64::EPSILON * x.abs() || hi - lo <= f64::EPSILON * hi;
        x = next;
        if done {
            break;
        }
    }
    Ok(x.copysign(p))
}

/// Single-precision rational approximation (Giles, 2010) used as the seed.
fn initial_guess(q: f64) -> f64 {
    let mut w = -((1.0 - q) * (1.0 + q)).ln();
    let p = if w < 5.0 {
        w -= 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        1.501_409_41 + p * w
    } else {
        w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        2.832_976_82 + p * w
    };
    p * q
}
