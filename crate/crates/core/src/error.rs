use thiserror::Error;

/// Errors produced by the models, the estimator and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("frequency {freq_hz} Hz is outside the band [{min_hz}, {max_hz}] Hz")]
    OutOfBand { freq_hz: f64, min_hz: f64, max_hz: f64 },

    #[error("frequency {freq_hz} Hz exceeds the bijective limit {f_max_hz} Hz")]
    BijectivityViolation { freq_hz: f64, f_max_hz: f64 },

    #[error("tune target {freq_hz} Hz is outside the filter range [{min_hz}, {max_hz}] Hz")]
    TuningRange { freq_hz: f64, min_hz: f64, max_hz: f64 },

    #[error("open-end reading is at the detector floor (no signal)")]
    NoSignal,

    #[error("both sensing taps are saturated; frequency is indeterminate")]
    IndeterminateFrequency,

    #[error("open-end reading is saturated with the attenuator at its maximum")]
    PowerOverrange,

    #[error("calibration grid outside the representable range: {0}")]
    CalibrationRange(String),

    #[error("node placement infeasible: {0}")]
    PlacementInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no matching {0} found in trace")]
    TraceEvent(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
