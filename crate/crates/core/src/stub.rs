//! The open-circuit sensing stub.
//!
//! Driven with incident power `P`, the open end of a lossless stub of
//! impedance `Z0S` swings `|V_oc| = sqrt(8·P·Z0S)`. A tap a distance `l` back
//! from the open end sees the standing-wave envelope
//! `|V(l)/V_oc| = |cos(π/2 · f/f_max)|` with `f_max = c/(4l)`, which is
//! one-to-one on `(0, f_max]`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::Frequency;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A sensing tap on the stub, named by its position (`l1` nearest the open end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapSpec {
    pub name: String,
    /// Upper limit of the one-to-one frequency range of this tap.
    pub f_max: Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubParams {
    pub z0s: f64,
    pub taps: Vec<TapSpec>,
    pub eps_eff: f64,
    /// Sense resistor at each node. Not electrically modeled; calibration
    /// absorbs its loading.
    pub r_d: f64,
}

impl Default for StubParams {
    fn default() -> Self {
        Self {
            z0s: 50.0,
            taps: vec![
                TapSpec { name: "l1".into(), f_max: Frequency::ghz(16.0) },
                TapSpec { name: "l2".into(), f_max: Frequency::ghz(5.0) },
            ],
            eps_eff: 1.0,
            r_d: 180.0,
        }
    }
}

impl StubParams {
    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(invalid("stub needs at least one tap"));
        }
        if self.taps.windows(2).any(|w| w[0].f_max <= w[1].f_max) {
            return Err(invalid("stub taps must be sorted by descending f_max"));
        }
        if !(self.z0s > 0.0) || !(self.eps_eff >= 1.0) {
            return Err(invalid("stub impedance must be positive and eps_eff >= 1"));
        }
        Ok(())
    }

    /// Physical distance of each tap from the open end, in meters.
    pub fn tap_lengths(&self) -> Vec<f64> {
        self.taps.iter().map(|t| tap_length(t.f_max, self.eps_eff)).collect()
    }
}

/// Open-end voltage magnitude for an incident power in watts.
pub fn v_oc_magnitude(p_stub_watts: f64, z0s: f64) -> f64 {
    (8.0 * p_stub_watts * z0s).sqrt()
}

/// The standing-wave envelope evaluated without range checking. Past `f_max`
/// the cosine keeps folding, as it does on the physical line.
pub fn standing_ratio_unchecked(f: Frequency, f_max: Frequency) -> f64 {
    (FRAC_PI_2 * f.as_hz() / f_max.as_hz()).cos().abs()
}

/// `|cos(π/2 · f/f_max)|`, rejecting frequencies beyond the one-to-one range.
pub fn standing_ratio(f: Frequency, f_max: Frequency) -> Result<f64> {
    if f > f_max {
        return Err(Error::BijectivityViolation { freq_hz: f.as_hz(), f_max_hz: f_max.as_hz() });
    }
    Ok(standing_ratio_unchecked(f, f_max))
}

/// Distance from the open end that puts the quarter-wave null at `f_max`.
pub fn tap_length(f_max: Frequency, eps_eff: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * f_max.as_hz() * eps_eff.sqrt())
}

/// Open-end and per-tap voltages for a set of tones.
#[derive(Debug, Clone, PartialEq)]
pub struct StubVoltages {
    pub v_oc: f64,
    pub taps: Vec<f64>,
}

/// Superposes the per-tone standing waves.
///
/// Tones at distinct frequencies add in power, so each voltage is the root of
/// the sum of squared per-tone contributions. `p_stub_per_tone` holds the
/// incident power of each `(frequency)` entry, in watts.
pub fn tap_rms_voltages(freqs: &[Frequency], stub: &StubParams, p_stub_per_tone: &[f64]) -> Result<StubVoltages> {
    if freqs.len() != p_stub_per_tone.len() {
        return Err(invalid("one stub power is required per tone"));
    }
    let mut v_oc_sq = 0.0;
    let mut taps_sq = vec![0.0; stub.taps.len()];
    for (&f, &p) in freqs.iter().zip(p_stub_per_tone) {
        let voc = v_oc_magnitude(p, stub.z0s);
        let voc_sq = voc * voc;
        v_oc_sq += voc_sq;
        for (acc, tap) in taps_sq.iter_mut().zip(&stub.taps) {
            let r = standing_ratio_unchecked(f, tap.f_max);
            *acc += voc_sq * r * r;
        }
    }
    Ok(StubVoltages { v_oc: v_oc_sq.sqrt(), taps: taps_sq.into_iter().map(f64::sqrt).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{tap_coupling, ResistiveTapParams};
    use crate::units::{dbm_to_watts, PowerLevel};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn open_end_voltage() {
        assert_abs_diff_eq!(v_oc_magnitude(1e-3, 50.0), 0.632, epsilon = 5e-4);
        assert_eq!(v_oc_magnitude(0.0, 75.0), 0.0);
        // 0 dBm in, -15 dB coupling, no attenuation, +20 dB gain
        let p_stub = dbm_to_watts(PowerLevel::dbm(0.0 - 15.0 + 20.0));
        assert_abs_diff_eq!(v_oc_magnitude(p_stub, 50.0), 1.125, epsilon = 5e-4);
        // same chain through an actual 210 ohm tap
        let c = tap_coupling(&ResistiveTapParams::new(210.0, 50.0).unwrap());
        let v = v_oc_magnitude(dbm_to_watts(PowerLevel::dbm(c + 20.0)), 50.0);
        assert_abs_diff_eq!(v, 1.125, epsilon = 0.02);
    }

    #[test]
    fn ratio_reference_points() {
        let fm = Frequency::ghz(16.0);
        assert_abs_diff_eq!(standing_ratio(Frequency::hz(1.0), fm).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(standing_ratio(fm, fm).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            standing_ratio(Frequency::ghz(8.0), fm).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(matches!(standing_ratio(Frequency::ghz(17.0), fm), Err(Error::BijectivityViolation { .. })));
    }

    #[test]
    fn tap_lengths() {
        assert_abs_diff_eq!(tap_length(Frequency::ghz(16.0), 1.0), 4.684e-3, epsilon = 5e-6);
        let l = tap_length(Frequency::ghz(10.0), 1.0);
        assert_relative_eq!(tap_length(Frequency::ghz(10.0), 4.0), l / 2.0, max_relative = 1e-12);
        assert_relative_eq!(tap_length(Frequency::ghz(20.0), 1.0), l / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn single_and_double_tone() {
        let stub = StubParams::default();
        let f = Frequency::ghz(8.0);
        let one = tap_rms_voltages(&[f], &stub, &[1e-3]).unwrap();
        assert_relative_eq!(one.v_oc, v_oc_magnitude(1e-3, 50.0));
        assert_relative_eq!(one.taps[0], one.v_oc * standing_ratio(f, Frequency::ghz(16.0)).unwrap());
        let two = tap_rms_voltages(&[f, Frequency::ghz(3.0)], &stub, &[1e-3, 1e-3]).unwrap();
        assert_relative_eq!(two.v_oc, 2f64.sqrt() * one.v_oc, max_relative = 1e-12);
    }

    #[test]
    fn weak_second_tone_barely_moves_readings() {
        let stub = StubParams {
            taps: vec![TapSpec { name: "l1".into(), f_max: Frequency::ghz(16.0) }],
            ..StubParams::default()
        };
        let f6 = Frequency::ghz(6.0);
        let f12 = Frequency::ghz(12.0);
        let alone = tap_rms_voltages(&[f6], &stub, &[1e-3]).unwrap();
        let both = tap_rms_voltages(&[f6, f12], &stub, &[1e-3, 1e-5]).unwrap();
        // power-sum oracle, independent of the implementation loop
        let c6 = (FRAC_PI_2 * 6.0 / 16.0).cos().powi(2);
        let c12 = (FRAC_PI_2 * 12.0 / 16.0).cos().powi(2);
        let expected_tap = (400.0 * (1e-3 * c6 + 1e-5 * c12)).sqrt();
        assert_relative_eq!(both.taps[0], expected_tap, max_relative = 1e-12);
        assert!((both.taps[0] / alone.taps[0] - 1.0).abs() < 0.005);
        assert!((both.v_oc / alone.v_oc - 1.0).abs() < 0.005);
    }

    #[test]
    fn beyond_range_tones_fold() {
        let stub = StubParams::default();
        let v = tap_rms_voltages(&[Frequency::ghz(7.5)], &stub, &[1e-3]).unwrap();
        // l2 (5 GHz) folds: |cos(1.5 * pi/2)|
        assert_relative_eq!(v.taps[1] / v.v_oc, (1.5 * FRAC_PI_2).cos().abs(), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn ratio_strictly_decreasing(a in 0.001f64..0.999, d in 1e-4f64..0.5) {
            let fm = Frequency::ghz(16.0);
            let b = (a + d).min(1.0);
            prop_assume!(b > a);
            let ra = standing_ratio(Frequency::hz(a * 16e9), fm).unwrap();
            let rb = standing_ratio(Frequency::hz(b * 16e9), fm).unwrap();
            prop_assert!(rb < ra);
        }

        #[test]
        fn voltages_homogeneous_and_permutation_invariant(
            tones in proptest::collection::vec((0.5f64..20.0, 1e-7f64..1e-1), 1..6),
            alpha in 1e-3f64..1e3,
        ) {
            let stub = StubParams::default();
            let freqs: Vec<Frequency> = tones.iter().map(|t| Frequency::ghz(t.0)).collect();
            let powers: Vec<f64> = tones.iter().map(|t| t.1).collect();
            let base = tap_rms_voltages(&freqs, &stub, &powers).unwrap();

            let scaled: Vec<f64> = powers.iter().map(|p| p * alpha).collect();
            let s = tap_rms_voltages(&freqs, &stub, &scaled).unwrap();
            prop_assert!((s.v_oc - base.v_oc * alpha.sqrt()).abs() <= 1e-9 * s.v_oc);
            for (x, y) in s.taps.iter().zip(&base.taps) {
                prop_assert!((x - y * alpha.sqrt()).abs() <= 1e-9 * s.v_oc);
            }

            let mut rf = freqs.clone();
            let mut rp = powers.clone();
            rf.reverse();
            rp.reverse();
            let r = tap_rms_voltages(&rf, &stub, &rp).unwrap();
            prop_assert!((r.v_oc - base.v_oc).abs() <= 1e-12 * base.v_oc);
            for (x, y) in r.taps.iter().zip(&base.taps) {
                prop_assert!((x - y).abs() <= 1e-12 * base.v_oc);
            }
        }

        #[test]
        fn single_tone_ratio_power_independent(f in 0.5f64..16.0, p in 1e-9f64..1.0) {
            let stub = StubParams::default();
            let a = tap_rms_voltages(&[Frequency::ghz(f)], &stub, &[p]).unwrap();
            let b = tap_rms_voltages(&[Frequency::ghz(f)], &stub, &[1e-3]).unwrap();
            prop_assert!((a.taps[0] / a.v_oc - b.taps[0] / b.v_oc).abs() < 1e-12);
        }
    }
}
