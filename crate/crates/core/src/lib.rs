//! Behavioral models and a simulator for standing-wave interference
//! detectors.
//!
//! A resistive tap (or directional coupler) diverts a replica of the main
//! line into an open-circuit stub. Log detectors at the open end and at two
//! points along the stub read the standing wave; the ratio of tap to open-end
//! voltage fixes the frequency, the open-end voltage fixes the power. A
//! controller holds the detectors in range with a step attenuator and tunes a
//! notch filter onto anything above a programmable threshold.
//!
//! ```
//! use swsense::{ChainConfig, Frequency, PowerLevel, SignalDescriptor, Tone};
//! use swsense::estimator::{build_calibration, estimate, settled_readout, GridSpec};
//! use swsense::controller::AgcWindow;
//!
//! let chain = ChainConfig::default();
//! let cal = build_calibration(&chain, &GridSpec::default()).unwrap();
//! let sig = SignalDescriptor::single(Tone::cw(Frequency::ghz(9.1), PowerLevel::dbm(3.0)));
//! let codes = settled_readout(&chain, &AgcWindow::for_chain(&chain), &sig);
//! let e = estimate(&codes, &cal).unwrap();
//! assert!((e.freq.as_ghz() - 9.1).abs() < 0.05);
//! assert!((e.power.as_dbm() - 3.0).abs() < 1.0);
//! ```

// `!(x > 0.0)` style checks are there to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod coupling;
pub mod error;
pub mod estimator;
pub mod filters;
pub mod readout;
pub mod sim;
pub mod stub;
pub mod units;

pub use error::{Error, Result};
pub use readout::{chain_readout, ChainConfig, TapCodes};
pub use units::{Frequency, PowerLevel, SignalDescriptor, Tone};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/coupling.md")]
    mod coupling {}
    #[doc = include_str!("../../../book/src/standing-wave.md")]
    mod standing_wave {}
    #[doc = include_str!("../../../book/src/readout.md")]
    mod readout {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/filters.md")]
    mod filters {}
    #[doc = include_str!("../../../book/src/controller.md")]
    mod controller {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
