use serde::{Deserialize, Serialize};

use super::protocol::SampleFrame;
use crate::error::{invalid, Result};
use crate::signal::SignalSegment;
use crate::CHANNEL_COUNT;

pub const RESOLUTION_BITS: u32 = 12;
pub const MAX_CODE: u16 = (1 << RESOLUTION_BITS) - 1;
pub const MID_SCALE: u16 = 1 << (RESOLUTION_BITS - 1);
const FULL_SCALE: f64 = (1u32 << RESOLUTION_BITS) as f64;

/// 12-bit, 4-channel converter. The analog front end is folded into a
/// single `gain`; 0 mV sits at mid-scale so bipolar signals fit unsigned codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdcConfig {
    pub vref_mv: f64,
    pub sample_rate_hz: f64,
    pub gain: f64,
}

impl Default for AdcConfig {
    fn default() -> Self {
        Self {
            vref_mv: 3300.0,
            sample_rate_hz: crate::DEFAULT_SAMPLE_RATE_HZ,
            gain: 1.0,
        }
    }
}

impl AdcConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vref", self.vref_mv),
            ("sample rate", self.sample_rate_hz),
            ("gain", self.gain),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Millivolts per code step.
    pub fn lsb_mv(&self) -> f64 {
        self.vref_mv / (FULL_SCALE * self.gain)
    }

    /// Saturating conversion of one voltage to a code.
    pub fn code(&self, mv: f64) -> u16 {
        let c = (mv * self.gain / self.vref_mv * FULL_SCALE + MID_SCALE as f64).round();
        c.clamp(0.0, MAX_CODE as f64) as u16
    }
}

pub fn raw_to_millivolts(code: u16, adc: &AdcConfig) -> Result<f64> {
    if code > MAX_CODE {
        return invalid(format!("code {code} exceeds the 12-bit range"));
    }
    Ok((code as f64 - MID_SCALE as f64) * adc.vref_mv / (FULL_SCALE * adc.gain))
}

/// Converts a 4-channel segment to frames, one per sample instant, with
/// sequence numbers counting up from `first_seq` and wrapping at 65536.
pub fn quantize_from(seg: &SignalSegment, adc: &AdcConfig, first_seq: u16) -> Result<Vec<SampleFrame>> {
    seg.validate()?;
    adc.validate()?;
    if seg.channel_count() != CHANNEL_COUNT {
        return invalid(format!(
            "the converter has {CHANNEL_COUNT} channels, segment has {}",
            seg.channel_count()
        ));
    }
    Ok((0..seg.len())
        .map(|n| SampleFrame {
            seq: first_seq.wrapping_add(n as u16),
            raw: std::array::from_fn(|c| adc.code(seg.channels[c][n])),
        })
        .collect())
}

pub fn quantize(seg: &SignalSegment, adc: &AdcConfig) -> Result<Vec<SampleFrame>> {
    quantize_from(seg, adc, 0)
}

/// Inverse of [`quantize`]: one channel per converter input, in mV.
pub fn frames_to_segment(frames: &[SampleFrame], adc: &AdcConfig) -> Result<SignalSegment> {
    adc.validate()?;
    let mut channels = vec![Vec::with_capacity(frames.len()); CHANNEL_COUNT];
    for f in frames {
        for (c, &code) in f.raw.iter().enumerate() {
            channels[c].push(raw_to_millivolts(code, adc)?);
        }
    }
    SignalSegment::new(adc.sample_rate_hz, channels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_scale_and_saturation() {
        let adc = AdcConfig::default();
        assert_eq!(adc.code(0.0), 2048);
        assert_eq!(adc.code(1650.0), 4095);
        assert_eq!(adc.code(1e6), 4095);
        assert_eq!(adc.code(-1650.0), 0);
        assert_eq!(adc.code(-1e6), 0);
    }

    #[test]
    fn inverse_mapping_values() {
        let adc = AdcConfig::default();
        assert_eq!(raw_to_millivolts(2048, &adc).unwrap(), 0.0);
        assert!((raw_to_millivolts(4095, &adc).unwrap() - 2047.0 * 3300.0 / 4096.0).abs() < 1e-12);
        assert!((raw_to_millivolts(4095, &adc).unwrap() - 1649.194_335_937_5).abs() < 1e-9);
        assert_eq!(raw_to_millivolts(0, &adc).unwrap(), -1650.0);
        assert!(raw_to_millivolts(4096, &adc).is_err());
    }

    #[test]
    fn sine_round_trip_within_half_lsb() {
        let adc = AdcConfig::default();
        let x: Vec<f64> = (0..500).map(|n| (n as f64 * 0.37).sin()).collect();
        let seg = SignalSegment::new(250.0, vec![x.clone(); 4]).unwrap();
        let frames = quantize(&seg, &adc).unwrap();
        let back = frames_to_segment(&frames, &adc).unwrap();
        for (a, b) in back.channels[0].iter().zip(&x) {
            assert!((a - b).abs() <= adc.vref_mv / 8192.0);
        }
    }

    #[test]
    fn seq_wraps() {
        let seg = SignalSegment::zeros(250.0, 4, 3).unwrap();
        let frames = quantize_from(&seg, &AdcConfig::default(), 65535).unwrap();
        let seqs: Vec<u16> = frames.iter().map(|f| f.seq).collect();
        assert_eq!(seqs, vec![65535, 0, 1]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let seg = SignalSegment::zeros(250.0, 3, 3).unwrap();
        assert!(quantize(&seg, &AdcConfig::default()).is_err());
    }
}
