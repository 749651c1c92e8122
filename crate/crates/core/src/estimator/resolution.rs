//! Frequency resolution of a log-detector tap and placement of a second
//! sensing node.
//!
//! Differentiating `V_det = A·log10(cos(π/2·f/f_max)) + D` and replacing the
//! derivative by a finite step of one ADC LSB gives
//!
//! ```text
//! Δf = ΔV_min / [ A·π / (2·ln10·f_max) · tan(π/2 · f/f_max) ]
//! ```
//!
//! which grows without bound as `f → 0`. A farther node with a lower `f_max`
//! takes over where the nearer node's relative resolution becomes
//! unacceptable.

use std::f64::consts::{FRAC_PI_2, LN_10, PI};

use crate::error::{Error, Result};
use crate::readout::{AdcParams, DetectorParams};
use crate::units::Frequency;

/// Smallest frequency change a tap with limit `f_max` resolves at `f`, in Hz.
///
/// Returns `+inf` as `f → 0` and `0` at or beyond `f_max`.
pub fn resolution(f: Frequency, f_max: Frequency, det: &DetectorParams, adc: &AdcParams) -> f64 {
    let (f, fm) = (f.as_hz(), f_max.as_hz());
    if f >= fm {
        return 0.0;
    }
    let slope = det.slope_a * PI / (2.0 * LN_10 * fm) * (FRAC_PI_2 * f / fm).tan();
    if slope <= 0.0 {
        return f64::INFINITY;
    }
    adc.lsb() / slope
}

/// Relative resolution `Δf / f`.
pub fn relative_resolution(f: Frequency, f_max: Frequency, det: &DetectorParams, adc: &AdcParams) -> f64 {
    resolution(f, f_max, det, adc) / f.as_hz()
}

const BISECTION_TOL_HZ: f64 = 1e6;

/// Lowest frequency at which a tap with limit `f_max` still meets
/// `max_fraction` relative resolution.
pub fn min_acceptable_frequency(
    f_max: Frequency,
    max_fraction: f64,
    det: &DetectorParams,
    adc: &AdcParams,
) -> Result<Frequency> {
    if !(max_fraction > 0.0 && max_fraction < 1.0) {
        return Err(Error::PlacementInfeasible(format!("relative resolution {max_fraction} must be in (0, 1)")));
    }
    let excess = |hz: f64| relative_resolution(Frequency::hz(hz), f_max, det, adc) - max_fraction;
    // Δf/f falls monotonically from +inf at 0 to 0 at f_max, so one crossing.
    let mut lo = f_max.as_hz() * 1e-9;
    let mut hi = f_max.as_hz();
    if excess(lo) <= 0.0 {
        return Ok(Frequency::hz(lo));
    }
    while hi - lo > BISECTION_TOL_HZ {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Frequency::hz(0.5 * (lo + hi)))
}

/// Places the second sensing node.
///
/// Returns `(f_max_2, f_min)`: the second node's bijective limit sits where
/// the first node stops meeting `max_fraction`, and `f_min` is where the
/// second node in turn stops meeting it.
pub fn place_nodes(
    f_max_1: Frequency,
    max_fraction: f64,
    det: &DetectorParams,
    adc: &AdcParams,
) -> Result<(Frequency, Frequency)> {
    let f_max_2 = min_acceptable_frequency(f_max_1, max_fraction, det, adc)?;
    let f_min = min_acceptable_frequency(f_max_2, max_fraction, det, adc)?;
    Ok((f_max_2, f_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn defaults() -> (DetectorParams, AdcParams) {
        (DetectorParams::default(), AdcParams::default())
    }

    /// Finite-difference oracle: the frequency step that moves the ideal
    /// detector output by one LSB, found from the transfer curve itself.
    fn fd_resolution(f: f64, fm: f64, det: &DetectorParams, adc: &AdcParams) -> f64 {
        let v = |x: f64| det.slope_a * (FRAC_PI_2 * x / fm).cos().log10();
        let h = f * 1e-6;
        let dvdf = (v(f + h) - v(f - h)) / (2.0 * h);
        adc.lsb() / dvdf.abs()
    }

    #[test]
    fn quarter_percent_at_half_limit() {
        let (d, a) = defaults();
        let r = resolution(Frequency::ghz(8.0), Frequency::ghz(16.0), &d, &a);
        assert_abs_diff_eq!(r, 20e6, epsilon = 0.1e6);
        assert_abs_diff_eq!(r / 8e9, 0.0025, epsilon = 0.0001);
    }

    #[test]
    fn matches_finite_difference() {
        let (d, a) = defaults();
        for ghz in [0.5, 2.0, 5.0, 8.0, 12.0, 15.0] {
            let r = resolution(Frequency::ghz(ghz), Frequency::ghz(16.0), &d, &a);
            let o = fd_resolution(ghz * 1e9, 16e9, &d, &a);
            assert!((r / o - 1.0).abs() < 1e-6, "{ghz} GHz: {r} vs {o}");
        }
    }

    #[test]
    fn limits() {
        let (d, a) = defaults();
        let fm = Frequency::ghz(16.0);
        assert!(resolution(Frequency::hz(1.0), fm, &d, &a) > 1e12);
        assert!(resolution(Frequency::hz(16e9 - 1.0), fm, &d, &a) < 1.0);
        assert_eq!(resolution(fm, fm, &d, &a), 0.0);
    }

    #[test]
    fn placement_example() {
        let (d, a) = defaults();
        let (f2, fmin) = place_nodes(Frequency::ghz(16.0), 0.0025, &d, &a).unwrap();
        assert_abs_diff_eq!(f2.as_ghz(), 8.0, epsilon = 0.05);
        assert!(fmin.as_ghz() > 3.6 && fmin.as_ghz() < 4.2, "{}", fmin.as_ghz());
    }

    #[test]
    fn loose_constraint_reaches_zero() {
        let (d, a) = defaults();
        let (_, fmin) = place_nodes(Frequency::ghz(16.0), 0.99, &d, &a).unwrap();
        let (_, tighter) = place_nodes(Frequency::ghz(16.0), 0.5, &d, &a).unwrap();
        assert!(fmin < tighter);
        assert!(fmin.as_ghz() < 0.05);
        assert!(matches!(place_nodes(Frequency::ghz(16.0), 0.0, &d, &a), Err(Error::PlacementInfeasible(_))));
        assert!(matches!(place_nodes(Frequency::ghz(16.0), 1.5, &d, &a), Err(Error::PlacementInfeasible(_))));
    }

    proptest! {
        #[test]
        fn resolution_decreasing(a in 0.001f64..0.99, d in 1e-4f64..0.5) {
            let (det, adc) = defaults();
            let b = (a + d).min(0.999);
            prop_assume!(b > a);
            let fm = Frequency::ghz(16.0);
            let ra = resolution(Frequency::hz(a * 16e9), fm, &det, &adc);
            let rb = resolution(Frequency::hz(b * 16e9), fm, &det, &adc);
            prop_assert!(rb < ra);
        }
    }
}
