//! Gaussian density and distribution functions.
//!
//! CDF and survival function go through `erfc` (musl's implementation via the
//! `libm` crate, accurate to about one ulp), so both tails keep full relative
//! precision.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[inline]
pub fn pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

#[inline]
pub fn ln_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

/// `P(X <= x)`.
#[inline]
pub fn cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc(-(x - mu) / sigma * FRAC_1_SQRT_2)
}

/// `P(X > x) = 1 - cdf`.
#[inline]
pub fn sf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * libm::erfc((x - mu) / sigma * FRAC_1_SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit references
    #[test]
    fn erfc_matches_references() {
        let cases = [
            (0.5, 0.479_500_122_186_953_462_317_253_3),
            (1.0, 0.157_299_207_050_285_130_658_779_4),
            (3.0, 2.209_049_699_858_544_137_277_613e-5),
            (6.0, 2.151_973_671_249_891_311_659_335e-17),
            (-2.5, 1.999_593_047_982_555_041_060_436),
            (10.0, 2.088_487_583_762_544_757_000_786e-45),
        ];
        for (x, want) in cases {
            let got = libm::erfc(x);
            assert!(((got - want) / want).abs() < 1e-12, "erfc({x}) = {got}");
        }
    }

    #[test]
    fn cdf_matches_references() {
        let cases = [
            (-3.0, 0.001_349_898_031_630_094_526_651_815),
            (-1.0, 0.158_655_253_931_457_051_414_767_5),
            (0.3, 0.617_911_422_188_952_633_072_273_6),
            (2.0, 0.977_249_868_051_820_792_799_717_4),
        ];
        for (x, want) in cases {
            assert!((cdf(x, 0.0, 1.0) - want).abs() < 1e-12);
            assert!((sf(-x, 0.0, 1.0) - want).abs() < 1e-12);
            assert!((cdf(2.0 * x + 1.0, 1.0, 2.0) - want).abs() < 1e-12);
        }
        assert_eq!(cdf(0.0, 0.0, 1.0), 0.5);
    }

    #[test]
    fn ln_pdf_agrees_with_pdf() {
        for x in [-3.0, -0.2, 0.0, 1.7] {
            assert!((ln_pdf(x, 0.3, 1.4).exp() - pdf(x, 0.3, 1.4)).abs() < 1e-15);
        }
    }
}
