//! The digital side of a detector stage: attenuator AGC, threshold
//! comparison and the filter engage/release state machine.
//!
//! Every sample handler runs the AGC first, then estimates, then decides.
//! Decisions take effect one controller clock after the sample is delivered.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, CalibrationTable, Confidence, Estimate};
use crate::readout::{adc_sample, AttenuatorParams, ChainConfig, TapCodes};
use crate::units::{Frequency, PowerLevel};

/// Detector-code window the AGC holds the open-end reading in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgcWindow {
    pub high_code: u32,
    pub low_code: u32,
}

impl AgcWindow {
    /// From 1 dB to 4 dB below the top of the detector's linear range.
    pub fn for_chain(cfg: &ChainConfig) -> Self {
        let d = &cfg.detector;
        let top = d.slope_a * d.v_in_max.log10() + d.intercept_b;
        let code = |db_below: f64| adc_sample(top - d.slope_a * db_below / 20.0, &cfg.adc);
        Self { high_code: code(1.0), low_code: code(4.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgcDecision {
    pub att_db: f64,
    /// Above the window with no attenuation left.
    pub overrange: bool,
}

/// One-step hill climb of the attenuator toward the AGC window, never
/// dropping below `floor_db`.
pub fn agc_policy(code_oc: u32, att_db: f64, window: &AgcWindow, att: &AttenuatorParams, floor_db: f64) -> AgcDecision {
    if code_oc > window.high_code {
        if att_db >= att.max_db {
            return AgcDecision { att_db, overrange: true };
        }
        return AgcDecision { att_db: att.quantize(att_db + att.step_db), overrange: false };
    }
    if code_oc < window.low_code && att_db > floor_db {
        let next = att.quantize(att_db - att.step_db).max(floor_db);
        return AgcDecision { att_db: next, overrange: false };
    }
    AgcDecision { att_db, overrange: false }
}

/// Threshold and timing settings of a controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub threshold: PowerLevel,
    pub clock_period: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agc_high_code: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agc_low_code: Option<u32>,
    /// Input level that lands the open end at the top of the AGC window with
    /// the attenuator at its resting value. Defaults to 12 dB over threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agc_engage_power: Option<PowerLevel>,
    /// Retune while engaged when the estimate moves by more than this.
    pub retune_tolerance_hz: f64,
    /// Time the filter needs after a command before readings reflect it.
    /// Defaults to the stage filter's tuning time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_settle_time: Option<f64>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            threshold: PowerLevel::dbm(0.0),
            clock_period: 200e-9,
            agc_high_code: None,
            agc_low_code: None,
            agc_engage_power: None,
            retune_tolerance_hz: 50e6,
            filter_settle_time: None,
        }
    }
}

pub const ENGAGE_HEADROOM_DB: f64 = 12.0;

impl ControllerConfig {
    pub fn with_threshold(dbm: f64) -> Self {
        Self { threshold: PowerLevel::dbm(dbm), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clock_period > 0.0) {
            return Err(invalid("clock_period must be positive"));
        }
        if !self.threshold.as_dbm().is_finite() {
            return Err(invalid("threshold must be finite"));
        }
        if let (Some(h), Some(l)) = (self.agc_high_code, self.agc_low_code) {
            if l >= h {
                return Err(invalid("agc_low_code must be below agc_high_code"));
            }
        }
        if !(self.retune_tolerance_hz > 0.0) {
            return Err(invalid("retune tolerance must be positive"));
        }
        Ok(())
    }

    /// Whether the threshold lies outside the programmable −20…+20 dBm range.
    pub fn threshold_out_of_range(&self) -> bool {
        !(-20.0..=20.0).contains(&self.threshold.as_dbm())
    }

    pub fn window(&self, chain: &ChainConfig) -> AgcWindow {
        let d = AgcWindow::for_chain(chain);
        AgcWindow {
            high_code: self.agc_high_code.unwrap_or(d.high_code),
            low_code: self.agc_low_code.unwrap_or(d.low_code),
        }
    }

    pub fn engage_power(&self) -> PowerLevel {
        self.agc_engage_power.unwrap_or(PowerLevel::dbm(self.threshold.as_dbm() + ENGAGE_HEADROOM_DB))
    }

    /// Resting attenuation: the smallest grid value that keeps a signal at
    /// the engage power at or under the window top.
    pub fn quiescent_attenuation(&self, chain: &ChainConfig) -> f64 {
        let w = self.window(chain);
        let d = &chain.detector;
        let v_det = f64::from(w.high_code) * chain.lsb();
        let v_in = 10f64.powf((v_det - d.intercept_b) / d.slope_a);
        let drive = chain.stub_drive_for_voltage(v_in);
        let need = self.engage_power().as_dbm() + chain.nominal_coupling_db() + chain.amplifier.gain_db - drive;
        chain.attenuator.quantize_up(need.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Engaging,
    Engaged,
    Releasing,
}

impl Mode {
    /// Engaged or about to be.
    pub fn is_engaged(self) -> bool {
        matches!(self, Mode::Engaging | Mode::Engaged)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Idle => "idle",
            Mode::Engaging => "engaging",
            Mode::Engaged => "engaged",
            Mode::Releasing => "releasing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    SetAttenuation { att_db: f64, effective_at: f64 },
    TuneFilter { freq: Frequency, effective_at: f64 },
    ReleaseFilter { effective_at: f64 },
    Flag { interferer: bool, effective_at: f64 },
}

impl Action {
    pub fn effective_at(&self) -> f64 {
        match *self {
            Action::SetAttenuation { effective_at, .. }
            | Action::TuneFilter { effective_at, .. }
            | Action::ReleaseFilter { effective_at }
            | Action::Flag { effective_at, .. } => effective_at,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Action::SetAttenuation { att_db, .. } => format!("att={att_db}"),
            Action::TuneFilter { freq, .. } => format!("tune={}", freq.as_hz()),
            Action::ReleaseFilter { .. } => "release".into(),
            Action::Flag { interferer, .. } => format!("flag={interferer}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    /// Last commanded attenuation.
    pub att_db: f64,
    pub last_estimate: Option<Estimate>,
    pub pending_action_at: Option<f64>,
    /// Frequency the filter was last told to tune to.
    pub tuned_to: Option<Frequency>,
    pub flag: bool,
    /// Samples taken before this instant predate the last filter command
    /// settling and do not move an engaged filter.
    pub hold_until: Option<f64>,
}

impl ControllerState {
    pub fn new(att_db: f64) -> Self {
        Self {
            mode: Mode::Idle,
            att_db,
            last_estimate: None,
            pending_action_at: None,
            tuned_to: None,
            flag: false,
            hold_until: None,
        }
    }

    /// Starting state with the attenuator at its resting value.
    pub fn initial(cfg: &ControllerConfig, chain: &ChainConfig) -> Self {
        Self::new(cfg.quiescent_attenuation(chain))
    }
}

/// One row of the per-sample controller log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLog {
    pub t_s: f64,
    pub code_oc: u32,
    pub code_l1: u32,
    pub code_l2: u32,
    pub att_db: f64,
    pub f_est_hz: Option<f64>,
    pub p_est_dbm: Option<f64>,
    pub mode: Mode,
    pub action: String,
}

pub struct SampleOutcome {
    pub state: ControllerState,
    pub actions: Vec<Action>,
    pub log: SampleLog,
    pub diagnostic: Option<String>,
}

enum Level {
    Above(Estimate),
    Below,
    Unknown,
}

/// Handles one delivered sample at time `now`.
pub fn on_sample(
    codes: &TapCodes,
    st: &ControllerState,
    cfg: &ControllerConfig,
    cal: &CalibrationTable,
    now: f64,
) -> SampleOutcome {
    let chain = &cal.chain;
    let mut s = st.clone();
    if let Some(at) = s.pending_action_at {
        if at <= now {
            s.mode = match s.mode {
                Mode::Engaging => Mode::Engaged,
                Mode::Releasing => Mode::Idle,
                m => m,
            };
            s.pending_action_at = None;
        }
    }
    let effect = now + cfg.clock_period;
    let mut actions = Vec::new();
    let mut diagnostic = None;

    let floor = cfg.quiescent_attenuation(chain);
    let agc = agc_policy(codes.code_oc, s.att_db, &cfg.window(chain), &chain.attenuator, floor);
    if agc.overrange {
        diagnostic = Some(Error::PowerOverrange.to_string());
    }
    if agc.att_db != s.att_db {
        s.att_db = agc.att_db;
        actions
            .push(Action::SetAttenuation { att_db: agc.att_db, effective_at: effect + chain.attenuator.settle_time });
    }

    let est = estimate(codes, cal);
    let level = match &est {
        Ok(e) if e.power > cfg.threshold => Level::Above(*e),
        Ok(_) | Err(Error::NoSignal) => Level::Below,
        Err(_) => Level::Unknown,
    };
    if let Err(e) = est.as_ref() {
        if !matches!(e, Error::NoSignal) {
            diagnostic = Some(e.to_string());
        }
    }
    s.last_estimate = est.as_ref().ok().copied();

    let settled = s.hold_until.is_none_or(|h| codes.t >= h);
    let hold = effect + cfg.filter_settle_time.unwrap_or(0.0);
    match level {
        Level::Above(e) if e.confidence != Confidence::Saturated && (settled || !s.mode.is_engaged()) => {
            let off_target = s.tuned_to.is_none_or(|f| (f.as_hz() - e.freq.as_hz()).abs() > cfg.retune_tolerance_hz);
            if !s.mode.is_engaged() || off_target {
                actions.push(Action::TuneFilter { freq: e.freq, effective_at: effect });
                if !s.flag {
                    actions.push(Action::Flag { interferer: true, effective_at: effect });
                    s.flag = true;
                }
                s.tuned_to = Some(e.freq);
                s.hold_until = Some(hold);
                if !s.mode.is_engaged() {
                    s.mode = Mode::Engaging;
                    s.pending_action_at = Some(effect);
                }
            }
        }
        Level::Below if s.mode.is_engaged() && settled => {
            actions.push(Action::ReleaseFilter { effective_at: effect });
            actions.push(Action::Flag { interferer: false, effective_at: effect });
            s.flag = false;
            s.tuned_to = None;
            s.hold_until = None;
            s.mode = Mode::Releasing;
            s.pending_action_at = Some(effect);
        }
        _ => {}
    }

    let log = SampleLog {
        t_s: codes.t,
        code_oc: codes.code_oc,
        code_l1: codes.code_l1,
        code_l2: codes.code_l2,
        att_db: codes.att_db,
        f_est_hz: s.last_estimate.map(|e| e.freq.as_hz()),
        p_est_dbm: s.last_estimate.map(|e| e.power.as_dbm()),
        mode: s.mode,
        action: actions.iter().map(Action::label).collect::<Vec<_>>().join(";"),
    };
    SampleOutcome { state: s, actions, log, diagnostic }
}
