use serde::{Deserialize, Serialize};

use super::envelope::{moving_rms, rectify, FeatureSeries};
use super::filter::{design_butterworth_highpass, design_notch, Biquad, FilterCascade};
use crate::error::{invalid, Result};
use crate::signal::SignalSegment;

/// One step of the preprocessing chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    HighPass,
    Rectify,
    Rms,
    Notch,
}

impl Stage {
    /// High-pass, rectify, sliding RMS, then the powerline notch.
    pub const DEFAULT_ORDER: [Stage; 4] = [Stage::HighPass, Stage::Rectify, Stage::Rms, Stage::Notch];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub hp_order: usize,
    pub hp_cutoff_hz: f64,
    pub rms_window_ms: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub fs_hz: f64,
    pub stages: Vec<Stage>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            hp_order: 8,
            hp_cutoff_hz: 100.0,
            rms_window_ms: 200.0,
            notch_hz: 60.0,
            notch_q: 30.0,
            fs_hz: crate::DEFAULT_SAMPLE_RATE_HZ,
            stages: Stage::DEFAULT_ORDER.to_vec(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.notch_hz != 50.0 && self.notch_hz != 60.0 {
            return invalid(format!("notch frequency must be 50 or 60 Hz, got {}", self.notch_hz));
        }
        let mut seen = Vec::new();
        for s in &self.stages {
            if seen.contains(s) {
                return invalid(format!("stage {s:?} listed twice"));
            }
            seen.push(*s);
        }
        // Designing the filters checks cutoff/notch/order against fs.
        Preprocessor::new(self).map(|_| ())
    }
}

/// A preprocessing chain with its filters designed once up front.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cfg: PreprocessConfig,
    highpass: FilterCascade,
    notch: Biquad,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig) -> Result<Self> {
        let highpass = design_butterworth_highpass(cfg.hp_order, cfg.hp_cutoff_hz, cfg.fs_hz)?;
        let notch = design_notch(cfg.notch_hz, cfg.notch_q, cfg.fs_hz)?;
        super::envelope::window_samples(cfg.rms_window_ms, cfg.fs_hz)?;
        Ok(Self {
            cfg: cfg.clone(),
            highpass,
            notch,
        })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn highpass_filter(&self) -> &FilterCascade {
        &self.highpass
    }

    pub fn notch_filter(&self) -> &Biquad {
        &self.notch
    }

    fn check_rate(&self, seg: &SignalSegment) -> Result<()> {
        seg.validate()?;
        if (seg.sample_rate_hz - self.cfg.fs_hz).abs() > 1e-9 {
            return invalid(format!(
                "segment sampled at {} Hz but the chain was designed for {} Hz",
                seg.sample_rate_hz, self.cfg.fs_hz
            ));
        }
        Ok(())
    }

    /// Only the high-pass stage; this is the classifier's input signal.
    pub fn highpass(&self, seg: &SignalSegment) -> Result<SignalSegment> {
        self.check_rate(seg)?;
        Ok(self.highpass.apply(seg))
    }

    pub fn apply_stage(&self, stage: Stage, seg: &SignalSegment) -> Result<SignalSegment> {
        Ok(match stage {
            Stage::HighPass => self.highpass.apply(seg),
            Stage::Rectify => rectify(seg),
            Stage::Rms => moving_rms(seg, self.cfg.rms_window_ms)?.into_segment(),
            Stage::Notch => seg.map_channels(|c| self.notch.process(c)),
        })
    }

    /// Runs the configured stages in order and clamps the result at zero.
    pub fn run(&self, seg: &SignalSegment) -> Result<FeatureSeries> {
        self.check_rate(seg)?;
        let mut cur = seg.clone();
        for &stage in &self.cfg.stages {
            cur = self.apply_stage(stage, &cur)?;
        }
        // The notch can ring slightly below zero on a nonnegative envelope.
        let cur = cur.map_channels(|c| c.iter().map(|v| v.max(0.0)).collect());
        Ok(FeatureSeries::from_segment(cur))
    }
}

pub fn preprocess_pipeline(seg: &SignalSegment, cfg: &PreprocessConfig) -> Result<FeatureSeries> {
    Preprocessor::new(cfg)?.run(seg)
}
