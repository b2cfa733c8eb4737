//! Standard normal probabilities evaluated in log space.
//!
//! Interval masses deep in either tail underflow long before the interval
//! itself becomes degenerate, so everything here works with `ln Q(z)` and
//! only exponentiates differences.

use libm::{erf, erfc};
use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

/// `ln sqrt(2 pi)`
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Above this `erfc` is replaced by the Mills-ratio continued fraction.
const ASYMPTOTIC_Z: f64 = 20.0;

/// Standard normal CDF.
pub(crate) fn cdf(z: f64) -> f64 {
    if z == f64::INFINITY {
        1.0
    } else if z == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

/// `ln P(Z > z)` for a standard normal `Z`, accurate far into the upper tail.
pub(crate) fn ln_upper_tail(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if z < ASYMPTOTIC_Z {
        return (0.5 * erfc(z * FRAC_1_SQRT_2)).ln();
    }
    // Q(z) = phi(z) / (z + 1/(z + 2/(z + 3/(z + ...))))
    let mut denom = z;
    for k in (1..=60).rev() {
        denom = z + k as f64 / denom;
    }
    -0.5 * z * z - LN_SQRT_2PI - denom.ln()
}

/// `ln(exp(hi) - exp(lo))` for `lo <= hi`, where both are log probabilities.
fn ln_diff(hi: f64, lo: f64) -> f64 {
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let delta = lo - hi;
    if delta >= 0.0 {
        return f64::NEG_INFINITY;
    }
    hi + (-delta.exp_m1()).ln()
}

/// `ln P(lo < Z <= hi)` for a standard normal `Z`.
///
/// Returns `-inf` when the interval is empty or its mass is not representable.
pub(crate) fn ln_interval_mass(lo: f64, hi: f64) -> f64 {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return f64::NEG_INFINITY;
    }
    if lo >= 0.0 {
        // both endpoints in the upper half: Q(lo) - Q(hi)
        ln_diff(ln_upper_tail(lo), ln_upper_tail(hi))
    } else if hi <= 0.0 {
        // mirror image: Phi(hi) - Phi(lo) = Q(-hi) - Q(-lo)
        ln_diff(ln_upper_tail(-hi), ln_upper_tail(-lo))
    } else {
        // straddles zero: (Phi(hi) - 1/2) + (1/2 - Phi(lo))
        let upper = if hi == f64::INFINITY { 1.0 } else { erf(hi * FRAC_1_SQRT_2) };
        let lower = if lo == f64::NEG_INFINITY { 1.0 } else { erf(-lo * FRAC_1_SQRT_2) };
        (upper + lower).ln() - LN_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_points() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-14);
        assert_eq!(cdf(f64::INFINITY), 1.0);
        assert_eq!(cdf(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn asymptotic_branch_is_continuous() {
        let below = ln_upper_tail(ASYMPTOTIC_Z - 1e-9);
        let above = ln_upper_tail(ASYMPTOTIC_Z + 1e-9);
        assert!((below - above).abs() < 1e-6, "{below} vs {above}");
        // ln Q(10) from a high-precision reference
        let reference = (7.619_853_024_160_47e-24f64).ln();
        assert!((ln_upper_tail(10.0) - reference).abs() < 1e-10);
    }

    #[test]
    fn far_tail_stays_finite() {
        let v = ln_upper_tail(60.0);
        assert!(v.is_finite());
        assert!(v < -1800.0);
        assert!(ln_interval_mass(60.0, 61.0).is_finite());
        assert!(ln_interval_mass(-61.0, -60.0).is_finite());
    }

    #[test]
    fn narrow_interval_around_zero() {
        let eps = 1e-10;
        let got = ln_interval_mass(-eps, eps).exp();
        let expected = 2.0 * eps / (2.0 * std::f64::consts::PI).sqrt();
        assert!((got / expected - 1.0).abs() < 1e-8);
    }

    #[test]
    fn whole_line_has_unit_mass() {
        assert_eq!(ln_interval_mass(f64::NEG_INFINITY, f64::INFINITY), 0.0);
        assert!((ln_interval_mass(0.0, f64::INFINITY) + LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_interval() {
        assert_eq!(ln_interval_mass(1.0, 1.0), f64::NEG_INFINITY);
        assert_eq!(ln_interval_mass(2.0, 1.0), f64::NEG_INFINITY);
    }
}
