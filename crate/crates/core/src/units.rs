//! Units, conversions and the multi-tone signal descriptor.
//!
//! Every module in the crate speaks in these types. Frequencies are carried
//! in hertz, powers in dBm, times in seconds.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default number of subtones used to represent a modulated interferer.
pub const DEFAULT_SUBTONES: u32 = 31;

/// A strictly positive, finite frequency in hertz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Frequency(f64);

impl Frequency {
    /// Panics if `hz` is not finite and positive. Use [`Frequency::try_hz`]
    /// for untrusted input.
    pub fn hz(hz: f64) -> Self {
        Self::try_hz(hz).expect("frequency must be finite and positive")
    }

    pub fn ghz(ghz: f64) -> Self {
        Self::hz(ghz * 1e9)
    }

    pub fn try_hz(hz: f64) -> Result<Self> {
        if hz.is_finite() && hz > 0.0 {
            Ok(Self(hz))
        } else {
            Err(invalid(format!("frequency must be finite and positive, got {hz}")))
        }
    }

    pub fn as_hz(self) -> f64 {
        self.0
    }

    pub fn as_ghz(self) -> f64 {
        self.0 * 1e-9
    }
}

impl TryFrom<f64> for Frequency {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::try_hz(v)
    }
}

impl From<Frequency> for f64 {
    fn from(f: Frequency) -> f64 {
        f.0
    }
}

/// A power level in dBm. `-inf` is permitted and means "no power".
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PowerLevel(f64);

impl PowerLevel {
    pub const fn dbm(dbm: f64) -> Self {
        Self(dbm)
    }

    pub fn from_watts(watts: f64) -> Self {
        Self(watts_to_dbm(watts))
    }

    pub fn as_dbm(self) -> f64 {
        self.0
    }

    pub fn watts(self) -> f64 {
        dbm_to_watts(self)
    }
}

/// `10^(dbm/10) / 1000`.
pub fn dbm_to_watts(p: PowerLevel) -> f64 {
    10f64.powf(p.0 / 10.0) * 1e-3
}

/// Inverse of [`dbm_to_watts`]; zero watts maps to `-inf` dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts * 1e3).log10()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn db_to_power_ratio(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn forever() -> f64 {
    f64::MAX
}

fn default_subtones() -> Option<u32> {
    None
}

/// An interferer or signal of interest.
///
/// A tone with non-zero `occupied_bw` is a modulated signal and is expanded
/// into a flat comb of `n_subtones` equal-power lines by [`expand_modulated`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ToneRepr")]
pub struct Tone {
    pub freq: Frequency,
    pub power: PowerLevel,
    pub t_on: f64,
    pub t_off: f64,
    pub occupied_bw: f64,
    pub n_subtones: u32,
}

#[derive(Deserialize)]
struct ToneRepr {
    freq: Frequency,
    power: PowerLevel,
    #[serde(default)]
    t_on: f64,
    #[serde(default = "forever")]
    t_off: f64,
    #[serde(default)]
    occupied_bw: f64,
    #[serde(default = "default_subtones")]
    n_subtones: Option<u32>,
}

impl TryFrom<ToneRepr> for Tone {
    type Error = Error;
    fn try_from(r: ToneRepr) -> Result<Self> {
        let n = r.n_subtones.unwrap_or(if r.occupied_bw > 0.0 { DEFAULT_SUBTONES } else { 1 });
        let tone = Tone {
            freq: r.freq,
            power: r.power,
            t_on: r.t_on,
            t_off: r.t_off,
            occupied_bw: r.occupied_bw,
            n_subtones: n,
        };
        tone.validate()?;
        Ok(tone)
    }
}

impl Tone {
    /// A continuous-wave tone that is always on.
    pub fn cw(freq: Frequency, power: PowerLevel) -> Self {
        Self { freq, power, t_on: 0.0, t_off: forever(), occupied_bw: 0.0, n_subtones: 1 }
    }

    /// A flat-spectrum modulated tone with the default comb density.
    pub fn modulated(freq: Frequency, power: PowerLevel, occupied_bw: f64) -> Self {
        let n_subtones = if occupied_bw > 0.0 { DEFAULT_SUBTONES } else { 1 };
        Self { freq, power, t_on: 0.0, t_off: forever(), occupied_bw, n_subtones }
    }

    /// Restricts the tone to the interval `[t_on, t_off)`.
    pub fn gated(mut self, t_on: f64, t_off: f64) -> Self {
        self.t_on = t_on;
        self.t_off = t_off;
        self
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_on && t < self.t_off
    }

    pub fn validate(&self) -> Result<()> {
        if !self.power.as_dbm().is_finite() && self.power.as_dbm() != f64::NEG_INFINITY {
            return Err(invalid("tone power must be finite or -inf"));
        }
        if !(self.t_on < self.t_off) {
            return Err(invalid(format!("tone t_on ({}) must precede t_off ({})", self.t_on, self.t_off)));
        }
        if !(self.occupied_bw >= 0.0 && self.occupied_bw.is_finite()) {
            return Err(invalid("occupied bandwidth must be finite and non-negative"));
        }
        if self.n_subtones == 0 || self.n_subtones.is_multiple_of(2) {
            return Err(invalid("n_subtones must be odd and at least 1"));
        }
        if self.occupied_bw == 0.0 && self.n_subtones != 1 {
            return Err(invalid("a tone with zero occupied bandwidth has exactly one subtone"));
        }
        if self.occupied_bw / 2.0 >= self.freq.as_hz() {
            return Err(invalid("occupied bandwidth extends below 0 Hz"));
        }
        Ok(())
    }
}

/// The set of tones present at some point in the chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SignalDescriptor {
    pub tones: Vec<Tone>,
}

impl SignalDescriptor {
    pub fn new(tones: Vec<Tone>) -> Self {
        Self { tones }
    }

    pub fn single(tone: Tone) -> Self {
        Self { tones: vec![tone] }
    }

    /// All subtones of all tones, ignoring timing.
    pub fn components(&self) -> Vec<(Frequency, f64)> {
        self.tones.iter().flat_map(expand_modulated).collect()
    }
}

/// Splits a tone into equal-power subtones spanning its occupied bandwidth.
///
/// Total power is conserved. A zero-bandwidth tone is returned unchanged.
pub fn expand_modulated(t: &Tone) -> Vec<(Frequency, f64)> {
    let total = dbm_to_watts(t.power);
    if t.occupied_bw == 0.0 || t.n_subtones <= 1 {
        return vec![(t.freq, total)];
    }
    let n = t.n_subtones as usize;
    let each = total / n as f64;
    let step = t.occupied_bw / (n - 1) as f64;
    let start = t.freq.as_hz() - t.occupied_bw / 2.0;
    (0..n).map(|i| (Frequency::hz(start + step * i as f64), each)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn dbm_reference_points() {
        assert_relative_eq!(dbm_to_watts(PowerLevel::dbm(0.0)), 1e-3, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(PowerLevel::dbm(20.0)), 0.1, max_relative = 1e-15);
        assert_relative_eq!(dbm_to_watts(PowerLevel::dbm(-20.0)), 10e-6, max_relative = 1e-15);
        assert_eq!(watts_to_dbm(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn cw_expands_to_itself() {
        let t = Tone::cw(Frequency::ghz(6.0), PowerLevel::dbm(0.0));
        let parts = expand_modulated(&t);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].0, Frequency::ghz(6.0));
        assert_relative_eq!(parts[0].1, 1e-3);
    }

    #[test]
    fn three_subtone_comb() {
        let mut t = Tone::modulated(Frequency::ghz(6.0), PowerLevel::dbm(0.0), 12e6);
        t.n_subtones = 3;
        let parts = expand_modulated(&t);
        let freqs: Vec<f64> = parts.iter().map(|p| p.0.as_ghz()).collect();
        assert_relative_eq!(freqs[0], 5.994, epsilon = 1e-12);
        assert_relative_eq!(freqs[1], 6.0, epsilon = 1e-12);
        assert_relative_eq!(freqs[2], 6.006, epsilon = 1e-12);
        for p in parts {
            assert_relative_eq!(p.1, 1e-3 / 3.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn tone_json_defaults() {
        let t: Tone = serde_json::from_str(r#"{"freq": 6e9, "power": 3.0}"#).unwrap();
        assert_eq!(t.n_subtones, 1);
        assert!(t.is_active(1e3));
        let m: Tone = serde_json::from_str(r#"{"freq": 6e9, "power": 3.0, "occupied_bw": 12e6}"#).unwrap();
        assert_eq!(m.n_subtones, DEFAULT_SUBTONES);
        assert!(serde_json::from_str::<Tone>(r#"{"freq": 6e9, "power": 0, "n_subtones": 4}"#).is_err());
        assert!(serde_json::from_str::<Tone>(r#"{"freq": -1, "power": 0}"#).is_err());
        assert!(serde_json::from_str::<Tone>(r#"{"freq": 1e9, "power": 0, "t_on": 2, "t_off": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn dbm_round_trip(dbm in -200.0f64..100.0) {
            let w = dbm_to_watts(PowerLevel::dbm(dbm));
            let back = watts_to_dbm(w);
            // relative error in the linear domain
            prop_assert!((dbm_to_watts(PowerLevel::dbm(back)) - w).abs() <= 1e-12 * w);
        }

        #[test]
        fn watts_monotone(a in -150.0f64..60.0, d in 1e-6f64..50.0) {
            prop_assert!(dbm_to_watts(PowerLevel::dbm(a + d)) > dbm_to_watts(PowerLevel::dbm(a)));
        }

        #[test]
        fn comb_conserves_power(f in 1.0f64..16.0, p in -40.0f64..30.0, bw in 0.0f64..50e6, k in 0u32..20) {
            let mut t = Tone::modulated(Frequency::ghz(f), PowerLevel::dbm(p), bw);
            if bw > 0.0 { t.n_subtones = 2 * k + 1; }
            let parts = expand_modulated(&t);
            // summation oracle
            let sum: f64 = parts.iter().map(|x| x.1).sum();
            let whole = dbm_to_watts(PowerLevel::dbm(p));
            prop_assert!((sum - whole).abs() <= 1e-12 * whole);
            prop_assert_eq!(parts.len() as u32, t.n_subtones);
        }
    }
}
