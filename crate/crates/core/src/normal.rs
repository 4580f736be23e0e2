//! Standard normal density and distribution helpers.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Density of the `d`-dimensional standard normal at `z`.
pub fn pdf_nd(z: &[f64]) -> f64 {
    let sq: f64 = z.iter().map(|v| v * v).sum();
    (2.0 * PI).powf(-(z.len() as f64) / 2.0) * (-0.5 * sq).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-15);
        assert!((cdf(-10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
        assert_eq!(cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(pdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn nd_density_factorizes() {
        let z = [0.3, -1.2];
        assert!((pdf_nd(&z) - pdf(0.3) * pdf(-1.2)).abs() < 1e-16);
    }
}
