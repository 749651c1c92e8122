//! Coupling network: the resistive tap, its dissipation, the behavioral
//! directional coupler, and how a downstream reflection perturbs the sampled
//! forward wave.
//!
//! The resistive tap is a shunt branch across the through line: `R_C` in
//! series with the matched monitor port. Nodal analysis of that branch gives
//!
//! ```text
//! C   = 2·Z0 / (2·R_C + 3·Z0)
//! S11 =   Z0 / (2·R_C + 3·Z0)
//! S21 = (2·R_C + 2·Z0) / (2·R_C + 3·Z0)
//! ```

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::{dbm_to_watts, Frequency, PowerLevel};

/// Package power ratings checked against the tap dissipation, in watts.
pub const DEFAULT_PACKAGE_LIMITS_W: [f64; 4] = [0.05, 0.1, 0.25, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistiveTapParams {
    /// Coupling resistor in ohms.
    pub r_c: f64,
    /// System impedance in ohms.
    pub z0: f64,
}

impl Default for ResistiveTapParams {
    fn default() -> Self {
        Self { r_c: 220.0, z0: 50.0 }
    }
}

impl ResistiveTapParams {
    pub fn new(r_c: f64, z0: f64) -> Result<Self> {
        let p = Self { r_c, z0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_c > 0.0 && self.z0 > 0.0) || !self.z0.is_finite() || self.r_c.is_nan() {
            return Err(invalid("tap resistances must be positive"));
        }
        Ok(())
    }

    /// Voltage ratio of the through node relative to the matched case, i.e. |S21|.
    fn node_ratio(&self) -> f64 {
        (2.0 * self.r_c + 2.0 * self.z0) / (2.0 * self.r_c + 3.0 * self.z0)
    }

    /// Linear power coupling into the monitor port.
    pub fn coupling_power_ratio(&self) -> f64 {
        let c = 2.0 * self.z0 / (2.0 * self.r_c + 3.0 * self.z0);
        c * c
    }

    /// Linear through power transmission |S21|².
    pub fn through_power_ratio(&self) -> f64 {
        let k = self.node_ratio();
        k * k
    }
}

/// Coupling of the resistive tap in dB.
pub fn tap_coupling(p: &ResistiveTapParams) -> f64 {
    20.0 * (2.0 * p.z0 / (2.0 * p.r_c + 3.0 * p.z0)).log10()
}

/// `(S11, S21)` of the resistive tap in dB.
pub fn tap_sparams(p: &ResistiveTapParams) -> (f64, f64) {
    let s11 = 20.0 * (p.z0 / (2.0 * p.r_c + 3.0 * p.z0)).log10();
    let s21 = 20.0 * p.node_ratio().log10();
    (s11, s21)
}

/// Fraction of the incident power burnt in `R_C`. Independent of drive level.
pub fn tap_dissipation_fraction(p: &ResistiveTapParams) -> f64 {
    let k = p.node_ratio();
    k * k * p.r_c * p.z0 / ((p.r_c + p.z0) * (p.r_c + p.z0))
}

/// Power dissipated in `R_C` for a given incident power, in watts.
pub fn tap_dissipation(p: &ResistiveTapParams, p_in: PowerLevel) -> f64 {
    tap_dissipation_fraction(p) * dbm_to_watts(p_in)
}

/// Largest incident power a resistor package rated `limit_w` tolerates.
pub fn max_input_for_package(p: &ResistiveTapParams, limit_w: f64) -> PowerLevel {
    PowerLevel::from_watts(limit_w / tap_dissipation_fraction(p))
}

/// `(limit_w, within_rating)` for each package limit.
pub fn package_check(p: &ResistiveTapParams, p_in: PowerLevel, limits_w: &[f64]) -> Vec<(f64, bool)> {
    let d = tap_dissipation(p, p_in);
    limits_w.iter().map(|&l| (l, d <= l)).collect()
}

/// Piecewise-linear table over frequency, stored as `(hz, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreqTable {
    pub points: Vec<(f64, f64)>,
}

impl FreqTable {
    pub fn flat(value: f64) -> Self {
        Self { points: vec![(0.0, value)] }
    }

    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("frequency table needs at least one point"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(invalid("frequency table has duplicate frequencies"));
        }
        Ok(Self { points })
    }

    /// Linear interpolation; constant extrapolation past either end.
    pub fn eval(&self, hz: f64) -> f64 {
        let pts = &self.points;
        if pts.len() == 1 || hz <= pts[0].0 {
            return pts[0].1;
        }
        let last = pts[pts.len() - 1];
        if hz >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= hz);
        let (f0, v0) = pts[i - 1];
        let (f1, v1) = pts[i];
        v0 + (v1 - v0) * (hz - f0) / (f1 - f0)
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

/// Behavioral directional coupler described by tables over frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCouplerParams {
    pub coupling_db: FreqTable,
    /// Through-path loss, positive dB.
    pub insertion_db: FreqTable,
    pub directivity_db: FreqTable,
    pub f_min: Frequency,
    pub f_max: Frequency,
}

impl Default for DirectionalCouplerParams {
    fn default() -> Self {
        Self {
            coupling_db: FreqTable::flat(-15.0),
            insertion_db: FreqTable { points: vec![(1e9, 0.6), (14e9, 1.6)] },
            directivity_db: FreqTable::flat(6.0),
            f_min: Frequency::ghz(1.0),
            f_max: Frequency::ghz(14.0),
        }
    }
}

/// Coupler behavior at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerResponse {
    pub coupling_db: f64,
    pub insertion_db: f64,
    pub directivity_db: f64,
}

impl DirectionalCouplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.f_min >= self.f_max {
            return Err(invalid("coupler band is empty"));
        }
        if self.coupling_db.values().any(|c| !(c < 0.0)) {
            return Err(invalid("coupler coupling must be negative dB"));
        }
        if self.directivity_db.values().any(|d| !(d >= 0.0)) {
            return Err(invalid("coupler directivity must be non-negative"));
        }
        if self.insertion_db.values().any(|d| !(d >= 0.0)) {
            return Err(invalid("coupler insertion loss must be non-negative"));
        }
        Ok(())
    }

    pub fn in_band(&self, f: Frequency) -> bool {
        f >= self.f_min && f <= self.f_max
    }

    /// Loads tables from CSV with columns
    /// `freq_hz, coupling_db, insertion_db, directivity_db`. The band is the
    /// span of the listed frequencies.
    pub fn from_csv_reader<R: Read>(rdr: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            freq_hz: f64,
            coupling_db: f64,
            insertion_db: f64,
            directivity_db: f64,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rdr);
        let mut c = Vec::new();
        let mut i = Vec::new();
        let mut d = Vec::new();
        for row in reader.deserialize::<Row>() {
            let r = row?;
            c.push((r.freq_hz, r.coupling_db));
            i.push((r.freq_hz, r.insertion_db));
            d.push((r.freq_hz, r.directivity_db));
        }
        if c.is_empty() {
            return Err(invalid("coupler CSV has no rows"));
        }
        let lo = c.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = c.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let params = Self {
            coupling_db: FreqTable::new(c)?,
            insertion_db: FreqTable::new(i)?,
            directivity_db: FreqTable::new(d)?,
            f_min: Frequency::try_hz(lo)?,
            f_max: Frequency::try_hz(hi)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }
}

/// Interpolated coupler response; errors outside `[f_min, f_max]`.
pub fn coupler_response(p: &DirectionalCouplerParams, f: Frequency) -> Result<CouplerResponse> {
    if !p.in_band(f) {
        return Err(Error::OutOfBand { freq_hz: f.as_hz(), min_hz: p.f_min.as_hz(), max_hz: p.f_max.as_hz() });
    }
    let hz = f.as_hz();
    Ok(CouplerResponse {
        coupling_db: p.coupling_db.eval(hz),
        insertion_db: p.insertion_db.eval(hz),
        directivity_db: p.directivity_db.eval(hz),
    })
}

/// Which coupling network a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    #[default]
    Tap,
    Coupler,
}

/// Coupling network used to sample the forward wave.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Tap,
    Coupler(&'a DirectionalCouplerParams),
}

/// Reflection seen from the sampling point: the downstream reflection
/// coefficient and the one-way delay from the sampling point to it.
pub struct ReflectionEnvironment<'a> {
    gamma: Box<dyn Fn(Frequency) -> Complex64 + 'a>,
    pub electrical_delay: f64,
}

impl<'a> ReflectionEnvironment<'a> {
    pub fn new(gamma: impl Fn(Frequency) -> Complex64 + 'a, electrical_delay: f64) -> Self {
        Self { gamma: Box::new(gamma), electrical_delay }
    }

    pub fn matched() -> Self {
        Self::new(|_| Complex64::new(0.0, 0.0), 0.0)
    }

    pub fn constant(gamma: Complex64, electrical_delay: f64) -> Self {
        Self::new(move |_| gamma, electrical_delay)
    }

    pub fn gamma(&self, f: Frequency) -> Complex64 {
        (self.gamma)(f)
    }
}

/// Multiplicative perturbation of the monitored amplitude caused by the
/// downstream reflection.
///
/// A resistive tap sees the full standing wave `|1 + Γ·e^{-jθ}|`; a
/// directional coupler sees the reflected wave suppressed by its directivity.
pub fn sampled_forward_amplitude(kind: Sampler<'_>, env: &ReflectionEnvironment<'_>, f: Frequency) -> Result<f64> {
    let gamma = env.gamma(f);
    if gamma.norm() > 1.0 + 1e-12 {
        return Err(invalid(format!("|gamma| = {} exceeds 1", gamma.norm())));
    }
    let theta = 2.0 * 2.0 * PI * f.as_hz() * env.electrical_delay;
    let rot = Complex64::from_polar(1.0, -theta);
    let leak = match kind {
        Sampler::Tap => 1.0,
        Sampler::Coupler(p) => {
            let r = coupler_response(p, f)?;
            10f64.powf(-r.directivity_db / 20.0)
        }
    };
    Ok((Complex64::new(1.0, 0.0) + gamma * leak * rot).norm())
}
