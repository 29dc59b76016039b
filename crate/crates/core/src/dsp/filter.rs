//! IIR filters realised as cascades of second-order sections.
//!
//! Butterworth designs go through the analog prototype and a bilinear
//! transform with the cutoff prewarped, so the digital magnitude response is
//! exactly the analog one evaluated at `tan(pi f / fs)`. Sections are ordered
//! by ascending Q; running the low-Q sections first keeps intermediate
//! signals from ringing up before the sharper sections see them.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::signal::SignalSegment;

/// One second-order section, `a0` normalised to 1.
///
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / fs_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }

    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        self.response(freq_hz, fs_hz).norm()
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    pub fn max_pole_radius(&self) -> f64 {
        let [p, q] = self.poles();
        p.norm().max(q.norm())
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_radius() < 1.0
    }

    /// Filters `x` with zero initial state (direct form II transposed).
    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        x.iter()
            .map(|&v| {
                let y = self.b0 * v + s1;
                s1 = self.b1 * v - self.a1 * y + s2;
                s2 = self.b2 * v - self.a2 * y;
                y
            })
            .collect()
    }
}

/// Ordered biquad sections with an overall gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCascade {
    pub sections: Vec<Biquad>,
    pub overall_gain: f64,
}

impl FilterCascade {
    pub fn single(section: Biquad) -> Self {
        Self {
            sections: vec![section],
            overall_gain: 1.0,
        }
    }

    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn response(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(self.overall_gain, 0.0), |acc, s| {
                acc * s.response(freq_hz, fs_hz)
            })
    }

    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        self.response(freq_hz, fs_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Runs one channel through every section in order.
    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().map(|v| v * self.overall_gain).collect();
        for s in &self.sections {
            y = s.process(&y);
        }
        y
    }

    /// Filters every channel independently, zero initial state per channel.
    pub fn apply(&self, seg: &SignalSegment) -> SignalSegment {
        seg.map_channels(|c| self.process(c))
    }
}

/// Filters a segment with `cascade`.
pub fn apply_filter(cascade: &FilterCascade, seg: &SignalSegment) -> SignalSegment {
    cascade.apply(seg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Band {
    Low,
    High,
}

fn check_butterworth_args(order: usize, fc_hz: f64, fs_hz: f64) -> Result<()> {
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return invalid(format!("sample rate must be positive, got {fs_hz}"));
    }
    if !(fc_hz > 0.0 && fc_hz < fs_hz / 2.0) {
        return invalid(format!(
            "cutoff {fc_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs_hz / 2.0
        ));
    }
    if order == 0 || order % 2 != 0 {
        return invalid(format!("order must be a positive even number, got {order}"));
    }
    Ok(())
}

fn butterworth(band: Band, order: usize, fc_hz: f64, fs_hz: f64) -> Result<FilterCascade> {
    check_butterworth_args(order, fc_hz, fs_hz)?;
    let k = (PI * fc_hz / fs_hz).tan();
    let k2 = k * k;
    // Pole pair j of the normalised prototype sits at angle phi_j from the
    // imaginary axis; its section is s^2 + 2 sin(phi_j) s + 1. Iterating j
    // downwards yields ascending Q = 1 / (2 sin phi_j).
    let sections = (0..order / 2)
        .rev()
        .map(|j| {
            let phi = PI * (2 * j + 1) as f64 / (2 * order) as f64;
            let inv_q = 2.0 * phi.sin();
            let a0 = 1.0 + k * inv_q + k2;
            let a1 = 2.0 * (k2 - 1.0) / a0;
            let a2 = (1.0 - k * inv_q + k2) / a0;
            match band {
                Band::High => Biquad {
                    b0: 1.0 / a0,
                    b1: -2.0 / a0,
                    b2: 1.0 / a0,
                    a1,
                    a2,
                },
                Band::Low => Biquad {
                    b0: k2 / a0,
                    b1: 2.0 * k2 / a0,
                    b2: k2 / a0,
                    a1,
                    a2,
                },
            }
        })
        .collect();
    Ok(FilterCascade {
        sections,
        overall_gain: 1.0,
    })
}

/// Even-order Butterworth high-pass as `order / 2` biquads.
pub fn design_butterworth_highpass(order: usize, fc_hz: f64, fs_hz: f64) -> Result<FilterCascade> {
    butterworth(Band::High, order, fc_hz, fs_hz)
}

/// Even-order Butterworth low-pass as `order / 2` biquads.
pub fn design_butterworth_lowpass(order: usize, fc_hz: f64, fs_hz: f64) -> Result<FilterCascade> {
    butterworth(Band::Low, order, fc_hz, fs_hz)
}

/// Second-order notch with a null at `f0_hz` and a -3 dB width of `f0 / q`.
pub fn design_notch(f0_hz: f64, q: f64, fs_hz: f64) -> Result<Biquad> {
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return invalid(format!("sample rate must be positive, got {fs_hz}"));
    }
    if !(f0_hz > 0.0 && f0_hz < fs_hz / 2.0) {
        return invalid(format!(
            "notch frequency {f0_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            fs_hz / 2.0
        ));
    }
    if !(q.is_finite() && q > 0.0) {
        return invalid(format!("notch Q must be positive, got {q}"));
    }
    let w0 = 2.0 * PI * f0_hz / fs_hz;
    // tan of half the digital bandwidth places the -3 dB edges exactly.
    let alpha = (PI * f0_hz / (q * fs_hz)).tan();
    let cos_w0 = w0.cos();
    let a0 = 1.0 + alpha;
    Ok(Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * cos_w0 / a0,
        b2: 1.0 / a0,
        a1: -2.0 * cos_w0 / a0,
        a2: (1.0 - alpha) / a0,
    })
}
