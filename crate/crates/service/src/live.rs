//! Server-side simulated recording for the live panel.
//!
//! A background task synthesises swallows back to back, pushes them through
//! the acquisition path (12-bit quantisation, framing, decoding) and appends
//! the decoded samples at the simulated sample rate.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use swallow_core::acquisition::{encode_frames, frames_to_segment, quantize, AdcConfig, FrameDecoder};
use swallow_core::signal::{add_noise, synth_swallow, NoiseConfig, SubjectKind, SubjectProfile, Volume};
use swallow_core::CHANNEL_COUNT;

/// Samples appended per simulator tick.
const TICK_SAMPLES: usize = 10;
const SEGMENT_S: f64 = 4.0;

#[derive(Debug, Clone, Deserialize)]
pub struct LiveStart {
    pub subject_id: String,
    #[serde(default = "default_kind")]
    pub kind: SubjectKind,
    pub volume_ml: Option<Volume>,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> SubjectKind {
    SubjectKind::Healthy
}

#[derive(Debug, Clone, Serialize)]
pub struct LiveStatus {
    pub recording: bool,
    pub subject_id: Option<String>,
    pub started_at: Option<DateTime<Utc>>,
    pub sample_rate_hz: f64,
    pub samples: usize,
}

pub struct LiveRecording {
    pub request: LiveStart,
    pub started_at: DateTime<Utc>,
    pub samples: Arc<Mutex<Vec<Vec<f64>>>>,
    stop: Arc<AtomicBool>,
    task: tokio::task::JoinHandle<()>,
}

impl LiveRecording {
    pub fn len(&self) -> usize {
        self.samples.lock().expect("live buffer poisoned")[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last `n` samples per channel and the time of the first one.
    pub fn window(&self, n: usize, fs: f64) -> (f64, Vec<Vec<f64>>) {
        let s = self.samples.lock().expect("live buffer poisoned");
        let start = s[0].len().saturating_sub(n);
        (start as f64 / fs, s.iter().map(|c| c[start..].to_vec()).collect())
    }

    /// Stops the simulator and returns everything recorded.
    pub async fn finish(self) -> Vec<Vec<f64>> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.task.await;
        std::mem::take(&mut *self.samples.lock().expect("live buffer poisoned"))
    }
}

/// Decoded millivolt samples of one synthetic recording, chunked per tick.
fn synth_chunks(req: &LiveStart, index: u64, fs: f64, adc: &AdcConfig) -> Vec<Vec<Vec<f64>>> {
    let seed = req.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index);
    let profile = SubjectProfile::for_kind(req.kind);
    let volume = req.volume_ml.unwrap_or(Volume::Ml10);
    let seg = synth_swallow(&profile, volume, SEGMENT_S, fs, seed)
        .and_then(|s| add_noise(&s, &NoiseConfig::default(), seed ^ 0x5A5A))
        .and_then(|s| quantize(&s, adc))
        .and_then(|f| encode_frames(&f));
    let Ok(bytes) = seg else {
        return Vec::new();
    };
    let mut dec = FrameDecoder::new();
    bytes
        .chunks(TICK_SAMPLES * swallow_core::acquisition::FRAME_LEN)
        .filter_map(|c| frames_to_segment(&dec.push(c), adc).ok())
        .map(|s| s.channels)
        .collect()
}

fn append(buf: &Mutex<Vec<Vec<f64>>>, chunk: &[Vec<f64>]) {
    let mut b = buf.lock().expect("live buffer poisoned");
    for (dst, src) in b.iter_mut().zip(chunk) {
        dst.extend_from_slice(src);
    }
}

/// Starts the simulator. The first tick is delivered before returning so a
/// recording is never empty.
pub fn start(req: LiveStart, fs: f64, speed: f64) -> LiveRecording {
    let adc = AdcConfig { sample_rate_hz: fs, ..Default::default() };
    let samples = Arc::new(Mutex::new(vec![Vec::new(); CHANNEL_COUNT]));
    let stop = Arc::new(AtomicBool::new(false));
    let mut chunks = synth_chunks(&req, 0, fs, &adc).into_iter();
    if let Some(first) = chunks.next() {
        append(&samples, &first);
    }
    let tick = Duration::from_secs_f64(TICK_SAMPLES as f64 / (fs * speed.max(1e-3)));
    let task = {
        let (samples, stop, req) = (Arc::clone(&samples), Arc::clone(&stop), req.clone());
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick);
            interval.tick().await;
            let mut index = 0;
            while !stop.load(Ordering::SeqCst) {
                interval.tick().await;
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let chunk = match chunks.next() {
                    Some(c) => c,
                    None => {
                        index += 1;
                        chunks = synth_chunks(&req, index, fs, &adc).into_iter();
                        match chunks.next() {
                            Some(c) => c,
                            None => break,
                        }
                    }
                };
                append(&samples, &chunk);
            }
        })
    };
    LiveRecording { request: req, started_at: Utc::now(), samples, stop, task }
}
