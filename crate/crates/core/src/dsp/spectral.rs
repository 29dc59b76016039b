use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signal::SignalSegment;

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Per-channel `20 log10(rms(active) / rms(baseline))`.
pub fn snr_db(seg: &SignalSegment, active: Range<usize>, baseline: Range<usize>) -> Result<Vec<f64>> {
    let n = seg.len();
    for (name, r) in [("active", &active), ("baseline", &baseline)] {
        if r.start >= r.end || r.end > n {
            return invalid(format!("{name} range {r:?} is empty or outside 0..{n}"));
        }
    }
    if active.start < baseline.end && baseline.start < active.end {
        return invalid(format!("active {active:?} overlaps baseline {baseline:?}"));
    }
    seg.channels
        .iter()
        .enumerate()
        .map(|(i, ch)| {
            let base = rms(&ch[baseline.clone()]);
            if base == 0.0 {
                return Err(Error::UndefinedSnr(format!("channel {i} baseline RMS is zero")));
            }
            Ok(20.0 * (rms(&ch[active.clone()]) / base).log10())
        })
        .collect()
}

/// Magnitude STFT, one `frames x bins` matrix per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate_hz: f64,
    /// `channels[c][frame][bin]`
    pub channels: Vec<Vec<Vec<f64>>>,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate_hz / self.window_len as f64
    }

    /// CSV of one channel: `time_s,bin0_hz,...` header then one row per frame.
    pub fn channel_csv(&self, channel: usize) -> String {
        let mut out = String::from("time_s");
        for b in 0..self.bins() {
            out.push_str(&format!(",{}", self.bin_hz(b)));
        }
        out.push('\n');
        for (f, row) in self.channels[channel].iter().enumerate() {
            let t = (f * self.hop) as f64 / self.sample_rate_hz;
            out.push_str(&t.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes with the unnormalised DFT convention
/// `X[k] = sum_n w[n] x[n] e^{-2 pi i k n / N}`.
pub fn stft_spectrogram(seg: &SignalSegment, window_len: usize, hop: usize) -> Result<Spectrogram> {
    if window_len == 0 || !window_len.is_power_of_two() {
        return invalid(format!("window length must be a power of two, got {window_len}"));
    }
    if hop == 0 || hop > window_len {
        return invalid(format!("hop must be in 1..={window_len}, got {hop}"));
    }
    if seg.len() < window_len {
        return invalid(format!(
            "segment of {} samples is shorter than the {window_len}-sample window",
            seg.len()
        ));
    }
    let frames = (seg.len() - window_len) / hop + 1;
    let bins = window_len / 2 + 1;
    let window = hann(window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex64::new(0.0, 0.0); window_len];
    let channels = seg
        .channels
        .iter()
        .map(|ch| {
            (0..frames)
                .map(|f| {
                    let start = f * hop;
                    for (b, (x, w)) in buf.iter_mut().zip(ch[start..start + window_len].iter().zip(&window)) {
                        *b = Complex64::new(x * w, 0.0);
                    }
                    fft.process(&mut buf);
                    buf[..bins].iter().map(|c| c.norm()).collect()
                })
                .collect()
        })
        .collect();
    Ok(Spectrogram {
        window_len,
        hop,
        sample_rate_hz: seg.sample_rate_hz,
        channels,
    })
}

/// Single-frequency DFT coefficient `sum_n x[n] e^{-2 pi i f n / fs}`.
pub fn dft_at(x: &[f64], freq_hz: f64, fs_hz: f64) -> Complex64 {
    let w = -2.0 * PI * freq_hz / fs_hz;
    x.iter()
        .enumerate()
        .map(|(n, &v)| Complex64::from_polar(v, w * n as f64))
        .sum()
}
