use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::coupling::CouplingKind;
use crate::error::{invalid, Result};
use crate::estimator::GridSpec;
use crate::filters::NotchModel;
use crate::readout::ChainConfig;
use crate::units::Tone;

fn default_dt() -> f64 {
    25e-9
}

/// One detector/filter stage of a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub filter: NotchModel,
    /// Overrides `chain.coupling`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingKind>,
    /// One-way delay from the sampling point to the filter, in seconds.
    #[serde(default)]
    pub electrical_delay_s: f64,
    /// Calibration sweep; defaults to the chain's usable band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<GridSpec>,
}

impl Default for StageSpec {
    fn default() -> Self {
        Self {
            chain: ChainConfig::default(),
            controller: ControllerConfig::default(),
            filter: NotchModel::default(),
            coupling: None,
            electrical_delay_s: 0.0,
            calibration: None,
        }
    }
}

impl StageSpec {
    /// Chain with the coupling override applied.
    pub fn effective_chain(&self) -> ChainConfig {
        let mut c = self.chain.clone();
        if let Some(k) = self.coupling {
            c.coupling = k;
        }
        c
    }

    pub fn grid(&self) -> GridSpec {
        self.calibration.clone().unwrap_or_else(|| GridSpec::for_chain(&self.effective_chain()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration_s: f64,
    #[serde(default = "default_dt")]
    pub dt_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub sources: Vec<Tone>,
    pub stages: Vec<StageSpec>,
    /// Instants at which per-tone spectra are captured.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots_s: Vec<f64>,
}

impl Scenario {
    pub fn new(duration_s: f64, sources: Vec<Tone>, stages: Vec<StageSpec>) -> Self {
        Self { duration_s, dt_s: default_dt(), seed: 0, sources, stages, snapshots_s: Vec::new() }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s must be positive"));
        }
        if !(self.dt_s > 0.0) || self.dt_s > self.duration_s {
            return Err(invalid("dt_s must be positive and no longer than the run"));
        }
        if self.stages.is_empty() {
            return Err(invalid("a scenario needs at least one stage"));
        }
        for t in &self.sources {
            t.validate()?;
        }
        for (i, st) in self.stages.iter().enumerate() {
            let chain = st.effective_chain();
            chain.validate()?;
            st.controller.validate()?;
            st.filter.validate()?;
            let ts = chain.adc.sample_period();
            if self.dt_s > ts / 4.0 + 1e-18 {
                return Err(invalid(format!(
                    "stage {}: dt_s {} exceeds a quarter of the ADC sample period {}",
                    i + 1,
                    self.dt_s,
                    ts
                )));
            }
            if !(st.electrical_delay_s >= 0.0) {
                return Err(invalid(format!("stage {}: electrical delay must be non-negative", i + 1)));
            }
        }
        if self.snapshots_s.iter().any(|&t| !(0.0..self.duration_s).contains(&t)) {
            return Err(invalid("snapshot instants must fall inside the run"));
        }
        Ok(())
    }
}
