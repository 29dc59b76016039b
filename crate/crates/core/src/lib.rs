//! Swallowing-monitoring sEMG pipeline.
//!
//! The crate is organised the way a recording flows through the system:
//!
//! * [`signal`] synthesises 4-channel swallow recordings for healthy and
//!   dysphagic subjects and handles the JSON-lines corpus format.
//! * [`acquisition`] emulates the 12-bit ADC, the DMA double buffer and the
//!   framed serial protocol used to ship samples off the sensor.
//! * [`dsp`] holds the preprocessing chain (Butterworth high-pass, rectifier,
//!   sliding RMS, powerline notch) plus SNR and STFT tooling.
//! * [`classifier`] is a from-scratch 1D/2D CNN with training, gradient
//!   checking, evaluation metrics and the Health Index mapping.

pub mod acquisition;
pub mod classifier;
pub mod dsp;
pub mod error;
pub mod signal;

pub use error::{Error, Result};
pub use signal::SignalSegment;

/// Sampling rate of the recording front end.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 250.0;

/// Number of electrode channels.
pub const CHANNEL_COUNT: usize = 4;
