//! Synthetic swallow recordings.
//!
//! A swallow event is one or more muscle bursts. Each burst is band-limited
//! Gaussian noise (20-120 Hz, unit RMS) shaped by a raised-cosine envelope
//! and scaled by the subject's amplitude, the swallowed volume and the
//! per-channel gain. Healthy subjects produce a single burst; dysphagic
//! subjects produce several weaker bursts spread over a longer event, the
//! signature of repeated swallowing attempts.
//!
//! All random draws come from a ChaCha stream seeded by the caller, and the
//! draw sequence never depends on the volume, so for a fixed seed changing
//! the volume only rescales the signal.

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SignalSegment;
use crate::dsp::{design_butterworth_highpass, design_butterworth_lowpass};
use crate::error::{invalid, Result};
use crate::CHANNEL_COUNT;

/// Fractional amplitude increase per millilitre swallowed.
pub const VOLUME_SLOPE_PER_ML: f64 = 0.08;

const CARRIER_LOW_HZ: f64 = 20.0;
const CARRIER_HIGH_HZ: f64 = 120.0;
/// Samples of carrier generated ahead of the segment so the band-pass has
/// settled before the first visible sample.
const CARRIER_WARMUP: usize = 256;
/// Relative jitter applied to each event's duration.
const EVENT_DURATION_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Healthy,
    Dysphagic,
}

/// Water bolus volume used in the swallowing test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Volume {
    Ml5,
    Ml10,
    Ml15,
}

impl Volume {
    pub const ALL: [Volume; 3] = [Volume::Ml5, Volume::Ml10, Volume::Ml15];

    pub fn ml(self) -> u32 {
        match self {
            Volume::Ml5 => 5,
            Volume::Ml10 => 10,
            Volume::Ml15 => 15,
        }
    }

    /// Amplitude multiplier `1 + slope * ml`.
    pub fn amplitude_factor(self) -> f64 {
        1.0 + VOLUME_SLOPE_PER_ML * self.ml() as f64
    }
}

impl TryFrom<u32> for Volume {
    type Error = String;

    fn try_from(ml: u32) -> std::result::Result<Self, String> {
        match ml {
            5 => Ok(Volume::Ml5),
            10 => Ok(Volume::Ml10),
            15 => Ok(Volume::Ml15),
            other => Err(format!("volume must be 5, 10 or 15 mL, got {other}")),
        }
    }
}

impl From<Volume> for u32 {
    fn from(v: Volume) -> u32 {
        v.ml()
    }
}

impl std::str::FromStr for Volume {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let ml: u32 = s.trim().parse().map_err(|_| format!("invalid volume '{s}'"))?;
        Volume::try_from(ml)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub kind: SubjectKind,
    /// Inclusive range of bursts per swallow event.
    pub burst_count_range: (u32, u32),
    /// Burst amplitude before the volume factor, in mV.
    pub burst_amplitude_mv: f64,
    /// Nominal length of one swallow event.
    pub event_duration_s: f64,
    pub per_channel_gain: [f64; CHANNEL_COUNT],
}

impl SubjectProfile {
    pub const DEFAULT_GAINS: [f64; CHANNEL_COUNT] = [1.0, 0.8, 0.9, 0.7];

    pub fn healthy() -> Self {
        Self {
            kind: SubjectKind::Healthy,
            burst_count_range: (1, 1),
            burst_amplitude_mv: 0.5,
            event_duration_s: 0.8,
            per_channel_gain: Self::DEFAULT_GAINS,
        }
    }

    /// 2-5 bursts at 60% of the healthy amplitude over twice the duration.
    pub fn dysphagic() -> Self {
        let h = Self::healthy();
        Self {
            kind: SubjectKind::Dysphagic,
            burst_count_range: (2, 5),
            burst_amplitude_mv: 0.6 * h.burst_amplitude_mv,
            event_duration_s: 2.0 * h.event_duration_s,
            per_channel_gain: Self::DEFAULT_GAINS,
        }
    }

    pub fn for_kind(kind: SubjectKind) -> Self {
        match kind {
            SubjectKind::Healthy => Self::healthy(),
            SubjectKind::Dysphagic => Self::dysphagic(),
        }
    }

    pub fn with_amplitude(mut self, mv: f64) -> Self {
        self.burst_amplitude_mv = mv;
        self
    }

    /// Amplitude may be zero (a silent subject); everything else must be
    /// strictly positive and the burst counts must match the subject kind.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.burst_count_range;
        match self.kind {
            SubjectKind::Healthy if (lo, hi) != (1, 1) => {
                return invalid(format!("healthy subjects have exactly one burst, got {lo}..={hi}"))
            }
            SubjectKind::Dysphagic if lo < 2 || hi < lo => {
                return invalid(format!("dysphagic burst range must satisfy 2 <= lo <= hi, got {lo}..={hi}"))
            }
            _ => {}
        }
        if !(self.burst_amplitude_mv.is_finite() && self.burst_amplitude_mv >= 0.0) {
            return invalid(format!("burst amplitude must be nonnegative, got {}", self.burst_amplitude_mv));
        }
        if !(self.event_duration_s.is_finite() && self.event_duration_s > 0.0) {
            return invalid(format!("event duration must be positive, got {}", self.event_duration_s));
        }
        if self.per_channel_gain.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return invalid(format!("channel gains must be positive, got {:?}", self.per_channel_gain));
        }
        Ok(())
    }
}

/// Interference added on top of a clean recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub white_noise_rms_mv: f64,
    pub powerline_hz: f64,
    pub powerline_amplitude_mv: f64,
    pub baseline_drift_amplitude_mv: f64,
    pub baseline_drift_hz: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            white_noise_rms_mv: 0.02,
            powerline_hz: 60.0,
            powerline_amplitude_mv: 0.2,
            baseline_drift_amplitude_mv: 0.3,
            baseline_drift_hz: 0.3,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            white_noise_rms_mv: 0.0,
            powerline_amplitude_mv: 0.0,
            baseline_drift_amplitude_mv: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.powerline_hz != 50.0 && self.powerline_hz != 60.0 {
            return invalid(format!("powerline frequency must be 50 or 60 Hz, got {}", self.powerline_hz));
        }
        if !(self.baseline_drift_hz > 0.0 && self.baseline_drift_hz < 5.0) {
            return invalid(format!("drift frequency must lie in (0, 5) Hz, got {}", self.baseline_drift_hz));
        }
        for (name, v) in [
            ("white noise RMS", self.white_noise_rms_mv),
            ("powerline amplitude", self.powerline_amplitude_mv),
            ("drift amplitude", self.baseline_drift_amplitude_mv),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("{name} must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// A synthesised event together with where its bursts landed.
#[derive(Debug, Clone, PartialEq)]
pub struct SwallowEvent {
    pub segment: SignalSegment,
    /// Sample ranges of the individual bursts, in time order.
    pub bursts: Vec<Range<usize>>,
}

impl SwallowEvent {
    /// From the first burst onset to the last burst offset.
    pub fn event_range(&self) -> Range<usize> {
        let start = self.bursts.first().map_or(0, |b| b.start);
        let end = self.bursts.last().map_or(0, |b| b.end);
        start..end
    }

    pub fn event_duration_s(&self) -> f64 {
        let r = self.event_range();
        (r.end - r.start) as f64 / self.segment.sample_rate_hz
    }
}

/// Unit-RMS band-limited Gaussian noise of length `len`.
fn carrier(rng: &mut ChaCha8Rng, len: usize, fs: f64) -> Result<Vec<f64>> {
    let high = CARRIER_HIGH_HZ.min(0.48 * fs);
    let hp = design_butterworth_highpass(4, CARRIER_LOW_HZ, fs)?;
    let lp = design_butterworth_lowpass(4, high, fs)?;
    let white: Vec<f64> = (0..len + CARRIER_WARMUP)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let band = lp.process(&hp.process(&white));
    let band = &band[CARRIER_WARMUP..];
    let rms = (band.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    Ok(band.iter().map(|v| if rms > 0.0 { v / rms } else { 0.0 }).collect())
}

/// Synthesises one swallow with burst bookkeeping.
pub fn synth_swallow_event(
    profile: &SubjectProfile,
    volume: Volume,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<SwallowEvent> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return invalid(format!("duration must be positive, got {duration_s}"));
    }
    if !(fs.is_finite() && fs > 2.5 * CARRIER_LOW_HZ) {
        return invalid(format!("sample rate must exceed {} Hz, got {fs}", 2.5 * CARRIER_LOW_HZ));
    }
    profile.validate()?;
    let max_event_s = profile.event_duration_s * (1.0 + EVENT_DURATION_JITTER);
    if duration_s < max_event_s {
        return invalid(format!(
            "segment of {duration_s} s cannot hold a swallow event of up to {max_event_s} s"
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_s * fs).round() as usize;
    let event_s = profile.event_duration_s * (1.0 + EVENT_DURATION_JITTER * rng.random_range(-1.0..=1.0));
    let event_len = ((event_s * fs).round() as usize).clamp(1, len);
    let onset = rng.random_range(0..=len - event_len);
    let (lo, hi) = profile.burst_count_range;
    let n_bursts = rng.random_range(lo..=hi) as usize;

    // Equal slots over the event; each burst fills 80-100% of its slot. The
    // first burst starts at the onset and the last one ends at the offset.
    let bound = |i: usize| onset + (i as f64 * event_len as f64 / n_bursts as f64).round() as usize;
    let bursts: Vec<Range<usize>> = (0..n_bursts)
        .map(|i| {
            let fill = if n_bursts == 1 { 1.0 } else { rng.random_range(0.8..=1.0) };
            let (lo, hi) = (bound(i), bound(i + 1));
            let width = (((hi - lo) as f64 * fill).round() as usize).clamp(1, (hi - lo).max(1));
            if i + 1 == n_bursts {
                hi - width..hi
            } else {
                lo..lo + width
            }
        })
        .collect();

    let mut envelope = vec![0.0; len];
    for b in &bursts {
        let width = (b.end - b.start) as f64;
        for (k, n) in b.clone().enumerate() {
            envelope[n] = 0.5 - 0.5 * (2.0 * PI * (k as f64 + 0.5) / width).cos();
        }
    }

    let amp = profile.burst_amplitude_mv * volume.amplitude_factor();
    let channels = profile
        .per_channel_gain
        .iter()
        .map(|&gain| {
            let c = carrier(&mut rng, len, fs)?;
            Ok(c.iter().zip(&envelope).map(|(x, e)| amp * gain * e * x).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(SwallowEvent {
        segment: SignalSegment::new(fs, channels)?,
        bursts,
    })
}

/// Synthesises one clean (noise-free) 4-channel swallow recording.
pub fn synth_swallow(
    profile: &SubjectProfile,
    volume: Volume,
    duration_s: f64,
    fs: f64,
    seed: u64,
) -> Result<SignalSegment> {
    synth_swallow_event(profile, volume, duration_s, fs, seed).map(|e| e.segment)
}

/// Returns a copy of `seg` with white noise, powerline hum and baseline drift
/// added to every channel. Phases and noise are drawn per channel from `seed`.
pub fn add_noise(seg: &SignalSegment, noise: &NoiseConfig, seed: u64) -> Result<SignalSegment> {
    seg.validate()?;
    noise.validate()?;
    if seg.sample_rate_hz <= 2.0 * noise.powerline_hz {
        return invalid(format!(
            "sample rate {} Hz cannot represent {} Hz powerline interference",
            seg.sample_rate_hz, noise.powerline_hz
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = seg.sample_rate_hz;
    let channels = seg
        .channels
        .iter()
        .map(|ch| {
            let line_phase = rng.random_range(0.0..2.0 * PI);
            let drift_phase = rng.random_range(0.0..2.0 * PI);
            ch.iter()
                .enumerate()
                .map(|(n, &x)| {
                    let t = n as f64 / fs;
                    let white: f64 = StandardNormal.sample(&mut rng);
                    x + noise.white_noise_rms_mv * white
                        + noise.powerline_amplitude_mv * (2.0 * PI * noise.powerline_hz * t + line_phase).sin()
                        + noise.baseline_drift_amplitude_mv
                            * (2.0 * PI * noise.baseline_drift_hz * t + drift_phase).sin()
                })
                .collect()
        })
        .collect();
    Ok(SignalSegment {
        sample_rate_hz: fs,
        channels,
        t0_s: seg.t0_s,
    })
}
