//! Readout chain: programmable attenuator, amplifier, logarithmic power
//! detectors and ADC.
//!
//! The monitored replica passes coupling → attenuator → amplifier → stub, and
//! each stub node (open end, `l1`, `l2`) feeds its own detector and ADC
//! channel.

use serde::{Deserialize, Serialize};

use crate::coupling::{
    tap_coupling, tap_sparams, CouplingKind, DirectionalCouplerParams, FreqTable, ResistiveTapParams,
};
use crate::error::{invalid, Result};
use crate::stub::{tap_rms_voltages, v_oc_magnitude, StubParams};
use crate::units::{db_to_power_ratio, dbm_to_watts, Frequency, PowerLevel, SignalDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuatorParams {
    pub step_db: f64,
    pub max_db: f64,
    pub settle_time: f64,
}

impl Default for AttenuatorParams {
    fn default() -> Self {
        Self { step_db: 0.25, max_db: 31.75, settle_time: 50e-9 }
    }
}

impl AttenuatorParams {
    /// Snaps to the nearest reachable state.
    pub fn quantize(&self, att_db: f64) -> f64 {
        let steps = (att_db / self.step_db).round();
        (steps * self.step_db).clamp(0.0, self.max_db)
    }

    /// Smallest reachable state at or above `att_db`.
    pub fn quantize_up(&self, att_db: f64) -> f64 {
        let steps = (att_db / self.step_db - 1e-9).ceil();
        (steps * self.step_db).clamp(0.0, self.max_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplifierParams {
    pub gain_db: f64,
    pub p_out_sat_dbm: f64,
}

impl Default for AmplifierParams {
    fn default() -> Self {
        Self { gain_db: 20.0, p_out_sat_dbm: 20.0 }
    }
}

/// Logarithmic detector `V = A·log10(v) + B`, linear between `v_in_min` and
/// `v_in_max` and clamped outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Volts per decade of input voltage.
    pub slope_a: f64,
    pub intercept_b: f64,
    pub v_in_min: f64,
    pub v_in_max: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        // -40 dBm .. 0 dBm of stub drive, expressed as open-end voltage at 50 ohm
        Self {
            slope_a: 0.4,
            intercept_b: 1.0,
            v_in_min: v_oc_magnitude(dbm_to_watts(PowerLevel::dbm(-40.0)), 50.0),
            v_in_max: v_oc_magnitude(dbm_to_watts(PowerLevel::dbm(0.0)), 50.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcParams {
    pub bits: u32,
    pub sample_rate: f64,
    pub v_fs: f64,
}

impl Default for AdcParams {
    fn default() -> Self {
        Self { bits: 12, sample_rate: 5e6, v_fs: 1.398 }
    }
}

impl AdcParams {
    /// Smallest resolvable voltage step, `v_fs / 2^bits`.
    pub fn lsb(&self) -> f64 {
        self.v_fs / f64::from(1u32 << self.bits)
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

/// Every hardware parameter of one detector: coupling network, stub,
/// attenuator, amplifier, detectors and ADC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(default)]
    pub coupling: CouplingKind,
    #[serde(default)]
    pub tap: ResistiveTapParams,
    #[serde(default)]
    pub coupler: DirectionalCouplerParams,
    #[serde(default)]
    pub stub: StubParams,
    #[serde(default)]
    pub attenuator: AttenuatorParams,
    #[serde(default)]
    pub amplifier: AmplifierParams,
    #[serde(default)]
    pub detector: DetectorParams,
    #[serde(default)]
    pub adc: AdcParams,
    /// Optional frequency-dependent gain ripple of the monitor path, in dB.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain_ripple_db: Option<FreqTable>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            coupling: CouplingKind::Tap,
            tap: ResistiveTapParams::default(),
            coupler: DirectionalCouplerParams::default(),
            stub: StubParams::default(),
            attenuator: AttenuatorParams::default(),
            amplifier: AmplifierParams::default(),
            detector: DetectorParams::default(),
            adc: AdcParams::default(),
            gain_ripple_db: None,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.tap.validate()?;
        self.coupler.validate()?;
        self.stub.validate()?;
        if self.stub.taps.len() != 2 {
            return Err(invalid("the readout chain digitizes exactly two stub taps (l1, l2)"));
        }
        let a = &self.attenuator;
        if !(a.step_db > 0.0 && a.step_db <= a.max_db) {
            return Err(invalid("attenuator needs 0 < step_db <= max_db"));
        }
        if !self.amplifier.gain_db.is_finite() {
            return Err(invalid("amplifier gain must be finite"));
        }
        let d = &self.detector;
        if !(d.slope_a > 0.0) || !(d.v_in_min > 0.0 && d.v_in_min < d.v_in_max) {
            return Err(invalid("detector needs slope_a > 0 and 0 < v_in_min < v_in_max"));
        }
        if !(6..=16).contains(&self.adc.bits) || !(self.adc.sample_rate > 0.0) || !(self.adc.v_fs > 0.0) {
            return Err(invalid("ADC needs 6..=16 bits, positive rate and full scale"));
        }
        Ok(())
    }

    pub fn lsb(&self) -> f64 {
        self.adc.lsb()
    }

    /// Code produced by an input at or below the detector's linear range.
    pub fn floor_code(&self) -> u32 {
        adc_sample(detector_voltage(0.0, &self.detector), &self.adc)
    }

    /// Code produced by an input at or above the detector's linear range.
    pub fn ceiling_code(&self) -> u32 {
        adc_sample(detector_voltage(f64::INFINITY, &self.detector), &self.adc)
    }

    pub fn switch_default(&self) -> Frequency {
        self.stub.taps[1].f_max
    }

    /// Power ratio from the main line into the monitor path. Tones outside a
    /// coupler's band are not coupled.
    pub fn monitor_coupling(&self, f: Frequency) -> f64 {
        let base = match self.coupling {
            CouplingKind::Tap => self.tap.coupling_power_ratio(),
            CouplingKind::Coupler => {
                if self.coupler.in_band(f) {
                    db_to_power_ratio(self.coupler.coupling_db.eval(f.as_hz()))
                } else {
                    0.0
                }
            }
        };
        let ripple = self.gain_ripple_db.as_ref().map_or(1.0, |t| db_to_power_ratio(t.eval(f.as_hz())));
        base * ripple
    }

    /// Power transmission of the through path of the coupling network.
    pub fn through_gain(&self, f: Frequency) -> f64 {
        match self.coupling {
            CouplingKind::Tap => db_to_power_ratio(tap_sparams(&self.tap).1),
            CouplingKind::Coupler => db_to_power_ratio(-self.coupler.insertion_db.eval(f.as_hz())),
        }
    }

    /// Mid-band coupling in dB, used for level planning.
    pub fn nominal_coupling_db(&self) -> f64 {
        match self.coupling {
            CouplingKind::Tap => tap_coupling(&self.tap),
            CouplingKind::Coupler => {
                let mid = 0.5 * (self.coupler.f_min.as_hz() + self.coupler.f_max.as_hz());
                self.coupler.coupling_db.eval(mid)
            }
        }
    }

    /// Input power that puts the stub drive at `p_stub_dbm` for a given
    /// attenuation, assuming the amplifier is linear.
    pub fn input_for_stub_drive(&self, p_stub_dbm: f64, att_db: f64) -> f64 {
        p_stub_dbm - self.nominal_coupling_db() + att_db - self.amplifier.gain_db
    }

    /// Stub drive level (dBm) that produces an open-end voltage `v`.
    pub fn stub_drive_for_voltage(&self, v: f64) -> f64 {
        10.0 * (v * v / (8.0 * self.stub.z0s) * 1e3).log10()
    }
}

/// One ADC sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapCodes {
    pub code_oc: u32,
    pub code_l1: u32,
    pub code_l2: u32,
    /// Attenuation in effect when the sample was taken.
    pub att_db: f64,
    pub t: f64,
}

impl TapCodes {
    pub fn tap(&self, index: usize) -> u32 {
        match index {
            0 => self.code_l1,
            _ => self.code_l2,
        }
    }
}

/// Log detector output for an input voltage; saturates at both ends.
pub fn detector_voltage(v_rms: f64, p: &DetectorParams) -> f64 {
    p.slope_a * v_rms.clamp(p.v_in_min, p.v_in_max).log10() + p.intercept_b
}

/// Truncating quantizer clamped to `[0, 2^bits - 1]`.
pub fn adc_sample(v: f64, p: &AdcParams) -> u32 {
    let code = (v / p.lsb()).floor();
    if code <= 0.0 || code.is_nan() {
        0
    } else {
        (code as u64).min(u64::from(p.max_code())) as u32
    }
}

/// A spectral line entering the monitor path: its frequency, its power on
/// the main line in watts, and the amplitude factor applied by any
/// downstream reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorComponent {
    pub freq: Frequency,
    pub watts: f64,
    pub amplitude: f64,
}

/// Analog voltages at the three stub nodes before detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeVoltages {
    pub v_oc: f64,
    pub v_l1: f64,
    pub v_l2: f64,
}

/// Stub node voltages for the given monitor components and attenuation.
pub fn node_voltages(components: &[MonitorComponent], cfg: &ChainConfig, att_db: f64) -> NodeVoltages {
    let path_gain = db_to_power_ratio(cfg.amplifier.gain_db - att_db);
    let mut freqs = Vec::with_capacity(components.len());
    let mut powers = Vec::with_capacity(components.len());
    for c in components {
        freqs.push(c.freq);
        powers.push(c.watts * cfg.monitor_coupling(c.freq) * c.amplitude * c.amplitude * path_gain);
    }
    let total: f64 = powers.iter().sum();
    let sat = dbm_to_watts(PowerLevel::dbm(cfg.amplifier.p_out_sat_dbm));
    if total > sat {
        let k = sat / total;
        powers.iter_mut().for_each(|p| *p *= k);
    }
    let v = tap_rms_voltages(&freqs, &cfg.stub, &powers).expect("lengths match");
    NodeVoltages { v_oc: v.v_oc, v_l1: v.taps[0], v_l2: v.taps[1] }
}

/// Digitizes the monitor components at attenuation `att_db`, sampled at `t`.
pub fn readout_components(components: &[MonitorComponent], cfg: &ChainConfig, att_db: f64, t: f64) -> TapCodes {
    let v = node_voltages(components, cfg, att_db);
    let code = |x: f64| adc_sample(detector_voltage(x, &cfg.detector), &cfg.adc);
    TapCodes { code_oc: code(v.v_oc), code_l1: code(v.v_l1), code_l2: code(v.v_l2), att_db, t }
}

/// Full forward model for a signal at the coupling network input.
///
/// `att_db` is snapped to the attenuator grid.
pub fn chain_readout(sig: &SignalDescriptor, cfg: &ChainConfig, att_db: f64) -> TapCodes {
    let att = cfg.attenuator.quantize(att_db);
    let comps: Vec<MonitorComponent> =
        sig.components().into_iter().map(|(freq, watts)| MonitorComponent { freq, watts, amplitude: 1.0 }).collect();
    readout_components(&comps, cfg, att, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stub::standing_ratio;
    use crate::units::Tone;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cw(ghz: f64, dbm: f64) -> SignalDescriptor {
        SignalDescriptor::single(Tone::cw(Frequency::ghz(ghz), PowerLevel::dbm(dbm)))
    }

    fn components(ghz: f64, dbm: f64) -> Vec<MonitorComponent> {
        vec![MonitorComponent { freq: Frequency::ghz(ghz), watts: dbm_to_watts(PowerLevel::dbm(dbm)), amplitude: 1.0 }]
    }

    #[test]
    fn detector_points() {
        let d = DetectorParams { v_in_min: 1e-3, v_in_max: 10.0, ..DetectorParams::default() };
        assert_abs_diff_eq!(detector_voltage(1.0, &d), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(detector_voltage(0.632, &d), 0.920, epsilon = 5e-4);
        assert_eq!(detector_voltage(1e-6, &d), detector_voltage(1e-3, &d));
        assert_eq!(detector_voltage(100.0, &d), detector_voltage(10.0, &d));
    }

    #[test]
    fn adc_points() {
        let a = AdcParams::default();
        assert_eq!(adc_sample(0.0, &a), 0);
        assert_eq!(adc_sample(-0.3, &a), 0);
        assert_eq!(adc_sample(a.v_fs, &a), 4095);
        assert_eq!(adc_sample(5.0, &a), 4095);
        assert_eq!(adc_sample(a.v_fs / 2.0, &a), 2048);
    }

    #[test]
    fn silence_reads_floor() {
        let cfg = ChainConfig::default();
        let codes = chain_readout(&SignalDescriptor::default(), &cfg, 0.0);
        let floor = cfg.floor_code();
        assert_eq!((codes.code_oc, codes.code_l1, codes.code_l2), (floor, floor, floor));
        let codes = chain_readout(&cw(6.0, f64::NEG_INFINITY), &cfg, 0.0);
        assert_eq!(codes.code_oc, floor);
    }

    #[test]
    fn null_at_l1_limit() {
        let cfg = ChainConfig::default();
        let codes = chain_readout(&cw(16.0, -10.0), &cfg, 0.0);
        assert_eq!(codes.code_l1, cfg.floor_code());
        assert!(codes.code_oc > cfg.floor_code() + 1000);
    }

    #[test]
    fn end_to_end_hand_computation() {
        let cfg = ChainConfig::default();
        // 8 GHz, -10 dBm keeps every node inside the detector range.
        let codes = chain_readout(&cw(8.0, -10.0), &cfg, 0.0);
        // hand computation of the same chain
        let c = 2.0 * 50.0 / (2.0 * 220.0 + 150.0);
        let p_stub = 1e-4 * c * c * 100.0;
        let v_oc = (8.0 * p_stub * 50.0f64).sqrt();
        let v_l1 = v_oc * (std::f64::consts::PI / 4.0).cos();
        let code = |v: f64| ((0.4 * v.log10() + 1.0) / (1.398 / 4096.0)).floor() as u32;
        assert_eq!(codes.code_oc, code(v_oc));
        assert_eq!(codes.code_l1, code(v_l1));
        // composite drive with 0 dBm in and -15 dB coupling is 1.125 V; here
        // the same path at the table resistor and -10 dBm
        assert_abs_diff_eq!(v_oc, 1.125 * 10f64.powf((-10.0 - 0.42) / 20.0), epsilon = 2e-3);
    }

    #[test]
    fn amplifier_clamps() {
        let cfg = ChainConfig::default();
        let hot = node_voltages(&components(6.0, 30.0), &cfg, 0.0);
        let sat_v = v_oc_magnitude(dbm_to_watts(PowerLevel::dbm(20.0)), 50.0);
        assert_abs_diff_eq!(hot.v_oc, sat_v, epsilon = 1e-9);
    }

    #[test]
    fn attenuation_shifts_voltage_exactly() {
        let cfg = ChainConfig::default();
        let a = node_voltages(&components(5.5, -5.0), &cfg, 2.0);
        let b = node_voltages(&components(5.5, -5.0), &cfg, 12.5);
        assert_abs_diff_eq!(20.0 * (a.v_oc / b.v_oc).log10(), 10.5, epsilon = 1e-9);
        assert_abs_diff_eq!(20.0 * (a.v_l2 / b.v_l2).log10(), 10.5, epsilon = 1e-9);
    }

    #[test]
    fn log_difference_tracks_ratio() {
        let cfg = ChainConfig::default();
        let f = Frequency::ghz(10.0);
        let v = node_voltages(&components(10.0, -12.0), &cfg, 0.0);
        let d = &cfg.detector;
        let diff = detector_voltage(v.v_l1, d) - detector_voltage(v.v_oc, d);
        let expected = d.slope_a * standing_ratio(f, Frequency::ghz(16.0)).unwrap().log10();
        assert_abs_diff_eq!(diff, expected, epsilon = 1e-12);
    }

    #[test]
    fn attenuator_grid() {
        let a = AttenuatorParams::default();
        assert_eq!(a.quantize(3.1), 3.0);
        assert_eq!(a.quantize(3.13), 3.25);
        assert_eq!(a.quantize(40.0), 31.75);
        assert_eq!(a.quantize_up(3.01), 3.25);
        assert_eq!(a.quantize_up(3.0), 3.0);
    }

    #[test]
    fn config_json_field_names() {
        let cfg = ChainConfig::default();
        let v = serde_json::to_value(&cfg).unwrap();
        for key in ["coupling", "tap", "coupler", "stub", "attenuator", "amplifier", "detector", "adc"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["tap"]["r_c"], 220.0);
        assert_eq!(v["adc"]["bits"], 12);
        assert_eq!(v["detector"]["slope_a"], 0.4);
        assert_eq!(v["stub"]["taps"][1]["f_max"], 5e9);
        let back: ChainConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, cfg);
        let partial: ChainConfig =
            serde_json::from_str(r#"{"adc": {"bits": 10, "sample_rate": 1e6, "v_fs": 1.0}}"#).unwrap();
        assert_eq!(partial.adc.bits, 10);
        assert_eq!(partial.tap, ResistiveTapParams::default());
    }

    proptest! {
        #[test]
        fn codes_monotone_in_power(f in 1.0f64..15.5, p in -40.0f64..25.0, dp in 0.01f64..10.0, att in 0u32..127) {
            let cfg = ChainConfig::default();
            let att = f64::from(att) * 0.25;
            let lo = chain_readout(&cw(f, p), &cfg, att);
            let hi = chain_readout(&cw(f, p + dp), &cfg, att);
            prop_assert!(hi.code_oc >= lo.code_oc);
            prop_assert!(hi.code_l1 >= lo.code_l1);
            prop_assert!(hi.code_l2 >= lo.code_l2);
            prop_assert!(hi.code_oc <= cfg.adc.max_code());
        }
    }
}
