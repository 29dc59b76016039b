use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Multi-channel sampled signal in millivolts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSegment {
    pub sample_rate_hz: f64,
    pub channels: Vec<Vec<f64>>,
    /// Start time of the first sample, seconds from the start of the recording.
    #[serde(default)]
    pub t0_s: f64,
}

impl SignalSegment {
    pub fn new(sample_rate_hz: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        let seg = Self {
            sample_rate_hz,
            channels,
            t0_s: 0.0,
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn zeros(sample_rate_hz: f64, channel_count: usize, len: usize) -> Result<Self> {
        Self::new(sample_rate_hz, vec![vec![0.0; len]; channel_count])
    }

    /// Checks the structural invariants: positive finite rate, at least one
    /// channel, equal channel lengths, finite samples.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return invalid(format!("sample rate must be positive, got {}", self.sample_rate_hz));
        }
        let Some(first) = self.channels.first() else {
            return invalid("segment has no channels");
        };
        let len = first.len();
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.len() != len {
                return invalid(format!(
                    "channel {i} has {} samples, channel 0 has {len}",
                    ch.len()
                ));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return invalid(format!("channel {i} contains non-finite samples"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Applies `f` to every channel, keeping rate and start time.
    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        Self {
            sample_rate_hz: self.sample_rate_hz,
            channels: self.channels.iter().map(|c| f(c)).collect(),
            t0_s: self.t0_s,
        }
    }

    /// Zero-pads or centre-truncates every channel to exactly `len` samples.
    pub fn fit_to_len(&self, len: usize) -> Self {
        self.map_channels(|c| fit_len(c, len))
    }
}

pub(crate) fn fit_len(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() >= len {
        let start = (x.len() - len) / 2;
        x[start..start + len].to_vec()
    } else {
        let mut out = x.to_vec();
        out.resize(len, 0.0);
        out
    }
}
