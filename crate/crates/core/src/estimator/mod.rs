//! Inversion of detector codes into frequency and power estimates.
//!
//! Frequency comes from the tap-to-open-end log difference,
//! `f = (2·f_max/π)·acos(10^((V_tap − V_oc − δ)/A))`, first at `l1` and, for
//! results below the switch frequency, again at `l2`. The closed form is then
//! nudged by the residual measured over the calibration table. Power comes
//! from the open-end code, compensated for attenuation, interpolated along
//! the calibration rows.

mod calibration;
mod resolution;

pub use calibration::{
    build_calibration, config_hash, settled_readout, CalCell, CalibrationTable, GridSpec, NodeConstants,
};
pub use resolution::{min_acceptable_frequency, place_nodes, relative_resolution, resolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::{ChainConfig, TapCodes};
use crate::units::{Frequency, PowerLevel};

/// Which stub tap produced a frequency estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapId {
    L1,
    L2,
}

impl TapId {
    pub fn index(self) -> usize {
        match self {
            TapId::L1 => 0,
            TapId::L2 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    InRange,
    /// The ratio left `(0, 1]` or a tap sat on its detector floor; the
    /// frequency is a boundary value.
    Clamped,
    /// The open-end detector is railed; power is a lower bound.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEstimate {
    pub freq: Frequency,
    pub tap_used: TapId,
    pub confidence: Confidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub freq: Frequency,
    pub power: PowerLevel,
    pub tap_used: TapId,
    pub confidence: Confidence,
}

pub(crate) struct ClosedForm {
    pub hz: f64,
    pub clamped: bool,
}

/// Closed-form frequency from one tap, before any table correction.
pub(crate) fn closed_form(cfg: &ChainConfig, d: &NodeConstants, tap: usize, code_oc: u32, code_tap: u32) -> ClosedForm {
    let lsb = cfg.lsb();
    let a = cfg.detector.slope_a;
    let f_max = cfg.stub.taps[tap].f_max.as_hz();
    let delta = d.tap(tap) - d.oc;
    let arg = 10f64.powf((f64::from(code_tap) * lsb - f64::from(code_oc) * lsb - delta) / a);
    let clamped = !(arg < 1.0) || code_tap <= cfg.floor_code();
    ClosedForm { hz: 2.0 * f_max / std::f64::consts::PI * arg.clamp(0.0, 1.0).acos(), clamped }
}

fn refined(cal: &CalibrationTable, tap: usize, codes: &TapCodes) -> (f64, bool) {
    let cf = closed_form(&cal.chain, &cal.d_const, tap, codes.code_oc, codes.tap(tap));
    let f_max = cal.chain.stub.taps[tap].f_max.as_hz();
    let hz = (cf.hz + cal.correction(tap, cf.hz)).clamp(0.0, f_max);
    (hz, cf.clamped)
}

fn check_signal(codes: &TapCodes, cfg: &ChainConfig) -> Result<()> {
    if codes.code_oc <= cfg.floor_code() {
        return Err(Error::NoSignal);
    }
    Ok(())
}

/// Frequency of the dominant signal and the tap that resolved it.
pub fn estimate_frequency(codes: &TapCodes, cal: &CalibrationTable) -> Result<FrequencyEstimate> {
    let cfg = &cal.chain;
    check_signal(codes, cfg)?;
    let ceil = cfg.ceiling_code();
    let oc_railed = codes.code_oc >= ceil;
    if oc_railed && codes.code_l1 >= ceil && codes.code_l2 >= ceil {
        return Err(Error::IndeterminateFrequency);
    }
    let switch = cal.switch_freq.as_hz();
    let tap_for = |hz: f64| if hz < switch { TapId::L2 } else { TapId::L1 };

    if let Some((f, _)) = cal.exact_hit(codes) {
        let confidence = if oc_railed { Confidence::Saturated } else { Confidence::InRange };
        return Ok(FrequencyEstimate { freq: f, tap_used: tap_for(f.as_hz()), confidence });
    }

    let (f1, c1) = refined(cal, 0, codes);
    let (hz, tap, clamped) = if f1 < switch {
        let (f2, c2) = refined(cal, 1, codes);
        // l2 is only consulted below the switch; keep the answer there
        let below = f2.min(next_below(switch));
        (below, TapId::L2, c2 || below != f2)
    } else {
        (f1, TapId::L1, c1)
    };
    let confidence = if oc_railed {
        Confidence::Saturated
    } else if clamped {
        Confidence::Clamped
    } else {
        Confidence::InRange
    };
    Ok(FrequencyEstimate { freq: Frequency::hz(hz.max(MIN_REPORTED_HZ)), tap_used: tap, confidence })
}

/// Lowest frequency reported for a fully clamped ratio.
pub const MIN_REPORTED_HZ: f64 = 1.0;

fn next_below(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Input power of the dominant signal at frequency `freq`.
///
/// For a railed open-end reading this is a lower bound.
pub fn estimate_power(codes: &TapCodes, freq: Frequency, cal: &CalibrationTable) -> Result<PowerLevel> {
    let cfg = &cal.chain;
    check_signal(codes, cfg)?;
    if codes.code_oc >= cfg.ceiling_code() && codes.att_db >= cfg.attenuator.max_db {
        return Err(Error::PowerOverrange);
    }
    let level = open_end_level(cfg, codes.code_oc, codes.att_db);
    let hz = freq.as_hz();
    let grid = &cal.freq_grid;
    let hi = grid.partition_point(|f| f.as_hz() <= hz);
    let p = if hi == 0 {
        row_power(cal, 0, level)
    } else if hi == grid.len() {
        row_power(cal, grid.len() - 1, level)
    } else {
        let (f0, f1) = (grid[hi - 1].as_hz(), grid[hi].as_hz());
        let w = (hz - f0) / (f1 - f0);
        let p0 = row_power(cal, hi - 1, level);
        let p1 = row_power(cal, hi, level);
        p0 + w * (p1 - p0)
    };
    Ok(PowerLevel::dbm(p))
}

/// Open-end detector output referred back to zero attenuation, in volts.
fn open_end_level(cfg: &ChainConfig, code_oc: u32, att_db: f64) -> f64 {
    f64::from(code_oc) * cfg.lsb() + cfg.detector.slope_a * att_db / 20.0
}

/// Inverts one calibration row. The attenuation-compensated open-end level
/// moves `A/20` volts per input dB, so each row reduces to one intercept,
/// averaged over its in-range cells to keep code quantization out.
fn row_power(cal: &CalibrationTable, fi: usize, level: f64) -> f64 {
    let cfg = &cal.chain;
    let (floor, ceil) = (cfg.floor_code(), cfg.ceiling_code());
    let per_volt = 20.0 / cfg.detector.slope_a;
    let offsets: Vec<f64> = (0..cal.n_power())
        .filter_map(|pi| {
            let c = cal.cell(fi, pi);
            (c.code_oc > floor && c.code_oc < ceil)
                .then(|| cal.power_grid[pi].as_dbm() - open_end_level(cfg, c.code_oc, c.att_db) * per_volt)
        })
        .collect();
    if offsets.is_empty() {
        return f64::NAN;
    }
    offsets.iter().sum::<f64>() / offsets.len() as f64 + level * per_volt
}

/// Frequency, power and provenance of the dominant signal.
///
/// Codes that exactly match a calibration cell return that cell's grid
/// point.
pub fn estimate(codes: &TapCodes, cal: &CalibrationTable) -> Result<Estimate> {
    let fe = estimate_frequency(codes, cal)?;
    let power = match cal.exact_hit(codes) {
        Some((_, p)) => p,
        None => estimate_power(codes, fe.freq, cal)?,
    };
    if !power.as_dbm().is_finite() {
        return Err(Error::CalibrationRange("no usable calibration row".into()));
    }
    Ok(Estimate { freq: fe.freq, power, tap_used: fe.tap_used, confidence: fe.confidence })
}

/// Frequency from a single tap, without switching. Used to compare the two
/// taps around the switch frequency.
pub fn estimate_with_tap(codes: &TapCodes, cal: &CalibrationTable, tap: TapId) -> Result<Frequency> {
    check_signal(codes, &cal.chain)?;
    Ok(Frequency::hz(refined(cal, tap.index(), codes).0.max(MIN_REPORTED_HZ)))
}
