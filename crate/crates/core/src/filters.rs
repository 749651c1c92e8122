//! Tunable bandstop filter models.
//!
//! The notch is a symmetric second-order shape in dB,
//! `s21 = −depth / (1 + ((f − f_c)/(bw/2))²)`. A reflective notch sends back
//! everything it does not pass, `|Γ|² = 1 − |s21|²`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::{db_to_power_ratio, Frequency, PowerLevel};

/// Upper edge of the band the simulator models.
pub const SIM_BAND_MAX_HZ: f64 = 20e9;

/// Smallest suppression an overdriven PIN-tuned notch keeps.
pub const MIN_DEPTH_DB: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotchKind {
    EvanescentPin,
    Yig,
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NotchRepr")]
pub struct NotchModel {
    pub kind: NotchKind,
    pub f_tune_range: [Frequency; 2],
    pub depth_db: f64,
    pub bw_3db: f64,
    pub tuning_time: f64,
    pub reflective: bool,
    pub power_knee_dbm: f64,
    pub depth_slope_db_per_db: f64,
}

#[derive(Deserialize)]
struct NotchRepr {
    #[serde(default = "default_kind")]
    kind: NotchKind,
    f_tune_range: Option<[Frequency; 2]>,
    depth_db: Option<f64>,
    bw_3db: Option<f64>,
    tuning_time: Option<f64>,
    reflective: Option<bool>,
    power_knee_dbm: Option<f64>,
    depth_slope_db_per_db: Option<f64>,
}

fn default_kind() -> NotchKind {
    NotchKind::EvanescentPin
}

impl TryFrom<NotchRepr> for NotchModel {
    type Error = Error;
    fn try_from(r: NotchRepr) -> Result<Self> {
        let d = NotchModel::of_kind(r.kind);
        let m = NotchModel {
            kind: r.kind,
            f_tune_range: r.f_tune_range.unwrap_or(d.f_tune_range),
            depth_db: r.depth_db.unwrap_or(d.depth_db),
            bw_3db: r.bw_3db.unwrap_or(d.bw_3db),
            tuning_time: r.tuning_time.unwrap_or(d.tuning_time),
            reflective: r.reflective.unwrap_or(d.reflective),
            power_knee_dbm: r.power_knee_dbm.unwrap_or(d.power_knee_dbm),
            depth_slope_db_per_db: r.depth_slope_db_per_db.unwrap_or(d.depth_slope_db_per_db),
        };
        m.validate()?;
        Ok(m)
    }
}

impl Default for NotchModel {
    fn default() -> Self {
        Self::evanescent()
    }
}

impl NotchModel {
    /// PIN-diode tuned evanescent-mode notch: fast, loses depth when driven
    /// hard.
    pub fn evanescent() -> Self {
        Self {
            kind: NotchKind::EvanescentPin,
            f_tune_range: [Frequency::ghz(1.0), Frequency::ghz(16.0)],
            depth_db: 30.0,
            bw_3db: 100e6,
            tuning_time: 50e-9,
            reflective: true,
            power_knee_dbm: 10.0,
            depth_slope_db_per_db: 1.5,
        }
    }

    pub fn yig() -> Self {
        Self {
            kind: NotchKind::Yig,
            f_tune_range: [Frequency::ghz(2.0), Frequency::ghz(20.0)],
            depth_db: 40.0,
            tuning_time: 100e-6,
            ..Self::evanescent()
        }
    }

    /// Instant, power-independent notch.
    pub fn ideal() -> Self {
        Self {
            kind: NotchKind::Ideal,
            f_tune_range: [Frequency::hz(1.0), Frequency::hz(SIM_BAND_MAX_HZ)],
            depth_db: 60.0,
            tuning_time: 0.0,
            ..Self::evanescent()
        }
    }

    pub fn of_kind(kind: NotchKind) -> Self {
        match kind {
            NotchKind::EvanescentPin => Self::evanescent(),
            NotchKind::Yig => Self::yig(),
            NotchKind::Ideal => Self::ideal(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.depth_db > 0.0) || !(self.bw_3db > 0.0) || !(self.tuning_time >= 0.0) {
            return Err(invalid("notch needs depth_db > 0, bw_3db > 0 and tuning_time >= 0"));
        }
        if !(self.depth_slope_db_per_db >= 0.0) {
            return Err(invalid("depth slope must be non-negative"));
        }
        let [lo, hi] = self.f_tune_range;
        if !(lo < hi) || hi.as_hz() > SIM_BAND_MAX_HZ {
            return Err(invalid(format!(
                "tuning range {}..{} GHz must be increasing and within 20 GHz",
                lo.as_ghz(),
                hi.as_ghz()
            )));
        }
        Ok(())
    }

    /// Center suppression for a tone of power `p_in`.
    pub fn effective_depth(&self, p_in: PowerLevel) -> f64 {
        match self.kind {
            NotchKind::EvanescentPin => {
                let over = (p_in.as_dbm() - self.power_knee_dbm).max(0.0);
                (self.depth_db - self.depth_slope_db_per_db * over).max(MIN_DEPTH_DB.min(self.depth_db))
            }
            _ => self.depth_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub engaged: bool,
    pub f_center: Frequency,
    /// Until this instant the notch is still moving and is parked
    /// off-channel.
    pub transition_until: f64,
}

impl Default for FilterState {
    fn default() -> Self {
        Self { engaged: false, f_center: Frequency::ghz(1.0), transition_until: f64::NEG_INFINITY }
    }
}

impl FilterState {
    /// True once tuned and settled.
    pub fn active(&self, now: f64) -> bool {
        self.engaged && now >= self.transition_until
    }
}

/// Transmission through the notch in dB (≤ 0) at time `now`.
pub fn notch_s21_db(m: &NotchModel, st: &FilterState, f: Frequency, p_in: PowerLevel, now: f64) -> f64 {
    if !st.active(now) {
        return 0.0;
    }
    let x = (f.as_hz() - st.f_center.as_hz()) / (m.bw_3db / 2.0);
    -m.effective_depth(p_in) / (1.0 + x * x)
}

/// Magnitude of the reflection the notch presents at `f`.
pub fn stopband_gamma(m: &NotchModel, st: &FilterState, f: Frequency, p_in: PowerLevel, now: f64) -> f64 {
    if !m.reflective {
        return 0.0;
    }
    let t = db_to_power_ratio(notch_s21_db(m, st, f, p_in, now));
    (1.0 - t).max(0.0).sqrt()
}

/// Starts tuning toward `target`; the notch is effective after the tuning
/// time. Retuning mid-transition restarts the clock.
pub fn tune(m: &NotchModel, _st: &FilterState, target: Frequency, now: f64) -> Result<FilterState> {
    let [lo, hi] = m.f_tune_range;
    if target < lo || target > hi {
        return Err(Error::TuningRange { freq_hz: target.as_hz(), min_hz: lo.as_hz(), max_hz: hi.as_hz() });
    }
    Ok(FilterState { engaged: true, f_center: target, transition_until: now + m.tuning_time })
}

/// Parks the notch; transmission is restored immediately.
pub fn release(st: &FilterState, now: f64) -> FilterState {
    FilterState { engaged: false, f_center: st.f_center, transition_until: now }
}
