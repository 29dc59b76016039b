//! Preprocessing chain and spectral tooling.

pub mod envelope;
pub mod filter;
pub mod pipeline;
pub mod spectral;

pub use envelope::{moving_rms, moving_rms_samples, rectify, window_samples, FeatureSeries};
pub use filter::{
    apply_filter, design_butterworth_highpass, design_butterworth_lowpass, design_notch, Biquad,
    FilterCascade,
};
pub use pipeline::{preprocess_pipeline, PreprocessConfig, Preprocessor, Stage};
pub use spectral::{dft_at, hann, snr_db, stft_spectrogram, Spectrogram};
