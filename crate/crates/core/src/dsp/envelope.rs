use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signal::SignalSegment;

/// Per-channel nonnegative feature values (the RMS envelope, in mV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeries {
    pub sample_rate_hz: f64,
    pub channels: Vec<Vec<f64>>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest value across all channels.
    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v))
    }

    pub fn channel_peaks(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|c| c.iter().fold(0.0f64, |m, &v| m.max(v)))
            .collect()
    }

    /// Writes `time_s,ch0,ch1,...` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s");
        for i in 0..self.channels.len() {
            out.push_str(&format!(",ch{i}"));
        }
        out.push('\n');
        for n in 0..self.len() {
            out.push_str(&format!("{}", n as f64 / self.sample_rate_hz));
            for ch in &self.channels {
                out.push_str(&format!(",{}", ch[n]));
            }
            out.push('\n');
        }
        out
    }

    pub(crate) fn into_segment(self) -> SignalSegment {
        SignalSegment {
            sample_rate_hz: self.sample_rate_hz,
            channels: self.channels,
            t0_s: 0.0,
        }
    }

    pub(crate) fn from_segment(seg: SignalSegment) -> Self {
        Self {
            sample_rate_hz: seg.sample_rate_hz,
            channels: seg.channels,
        }
    }
}

/// Element-wise absolute value.
pub fn rectify(seg: &SignalSegment) -> SignalSegment {
    seg.map_channels(|c| c.iter().map(|v| v.abs()).collect())
}

/// Window length in samples for a window given in milliseconds.
pub fn window_samples(window_ms: f64, fs_hz: f64) -> Result<usize> {
    if !(window_ms.is_finite() && window_ms > 0.0) {
        return invalid(format!("RMS window must be positive, got {window_ms} ms"));
    }
    let w = (window_ms * fs_hz / 1000.0).round();
    if w < 1.0 {
        return invalid(format!(
            "RMS window of {window_ms} ms is shorter than one sample at {fs_hz} Hz"
        ));
    }
    Ok(w as usize)
}

/// Causal sliding RMS over the last `window` samples. The first `window - 1`
/// outputs average over the samples seen so far.
pub fn moving_rms_samples(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return invalid("RMS window must be at least one sample");
    }
    let mut out = Vec::with_capacity(x.len());
    let mut sum = 0.0;
    for (n, &v) in x.iter().enumerate() {
        sum += v * v;
        if n >= window {
            let old = x[n - window];
            sum -= old * old;
        }
        if n % window == window - 1 {
            // Re-derive the sum once per window so add/subtract rounding
            // never accumulates past one window length.
            sum = x[n + 1 - window..=n].iter().map(|s| s * s).sum();
        }
        let count = (n + 1).min(window) as f64;
        out.push((sum.max(0.0) / count).sqrt());
    }
    Ok(out)
}

/// Sliding RMS envelope of every channel with a window given in milliseconds.
pub fn moving_rms(seg: &SignalSegment, window_ms: f64) -> Result<FeatureSeries> {
    let w = window_samples(window_ms, seg.sample_rate_hz)?;
    let channels = seg
        .channels
        .iter()
        .map(|c| moving_rms_samples(c, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSeries {
        sample_rate_hz: seg.sample_rate_hz,
        channels,
    })
}
