//! Serial framing for sample frames.
//!
//! ```text
//! offset  size  field
//!      0     2  sync marker AA 55
//!      2     2  sequence number, little-endian
//!      4     8  four 12-bit samples, 2 bytes little-endian each, right-aligned
//!     12     1  XOR of bytes 2..12
//! ```

use serde::{Deserialize, Serialize};

use super::adc::MAX_CODE;
use crate::error::{invalid, Result};
use crate::CHANNEL_COUNT;

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const FRAME_LEN: usize = 13;
const PAYLOAD: std::ops::Range<usize> = 2..12;

/// One sample instant: a wrapping sequence number and four raw codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleFrame {
    pub seq: u16,
    pub raw: [u16; CHANNEL_COUNT],
}

impl SampleFrame {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.raw.iter().find(|&&c| c > MAX_CODE) {
            return invalid(format!("raw code {c} exceeds the 12-bit range"));
        }
        Ok(())
    }
}

fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

pub fn encode_frame(frame: &SampleFrame) -> Result<[u8; FRAME_LEN]> {
    frame.validate()?;
    let mut out = [0u8; FRAME_LEN];
    out[..2].copy_from_slice(&SYNC);
    out[2..4].copy_from_slice(&frame.seq.to_le_bytes());
    for (i, code) in frame.raw.iter().enumerate() {
        out[4 + 2 * i..6 + 2 * i].copy_from_slice(&code.to_le_bytes());
    }
    out[12] = checksum(&out[PAYLOAD]);
    Ok(out)
}

/// Concatenated encoding of `frames`; this is also the on-disk layout of a
/// recorded raw stream.
pub fn encode_frames(frames: &[SampleFrame]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(frames.len() * FRAME_LEN);
    for f in frames {
        out.extend_from_slice(&encode_frame(f)?);
    }
    Ok(out)
}

fn parse_frame(bytes: &[u8]) -> Option<SampleFrame> {
    debug_assert!(bytes.len() >= FRAME_LEN && bytes[..2] == SYNC);
    if checksum(&bytes[PAYLOAD]) != bytes[12] {
        return None;
    }
    let mut raw = [0u16; CHANNEL_COUNT];
    for (i, r) in raw.iter_mut().enumerate() {
        *r = u16::from_le_bytes([bytes[4 + 2 * i], bytes[5 + 2 * i]]);
        if *r > MAX_CODE {
            return None;
        }
    }
    Some(SampleFrame {
        seq: u16::from_le_bytes([bytes[2], bytes[3]]),
        raw,
    })
}

/// Counters accumulated by a [`FrameDecoder`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub bytes_in: u64,
    pub frames: u64,
    pub bytes_discarded: u64,
    /// Contiguous stretches of discarded bytes: garbage before a sync marker,
    /// frames failing validation, or a truncated tail.
    pub resync_events: u64,
}

impl DecodeStats {
    /// Every byte is either part of a decoded frame, discarded, or still
    /// buffered waiting for the rest of its frame.
    pub fn is_consistent(&self, buffered: usize) -> bool {
        self.frames * FRAME_LEN as u64 + self.bytes_discarded + buffered as u64 == self.bytes_in
    }
}

/// Incremental decoder that tolerates arbitrary corruption.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    pending: Vec<u8>,
    discarding: bool,
    stats: DecodeStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecodeStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.pending.len()
    }

    fn discard(&mut self, n: usize) {
        if n == 0 {
            return;
        }
        self.stats.bytes_discarded += n as u64;
        if !self.discarding {
            self.discarding = true;
            self.stats.resync_events += 1;
        }
    }

    /// Feeds bytes and returns every frame completed by them, in order.
    pub fn push(&mut self, bytes: &[u8]) -> Vec<SampleFrame> {
        self.stats.bytes_in += bytes.len() as u64;
        self.pending.extend_from_slice(bytes);
        let mut frames = Vec::new();
        let mut pos = 0;
        loop {
            let rest = &self.pending[pos..];
            let Some(off) = rest.windows(2).position(|w| w == SYNC) else {
                // Keep a trailing AA: it may be the first half of a marker.
                let keep = usize::from(rest.last() == Some(&SYNC[0]));
                let drop = rest.len() - keep;
                self.discard(drop);
                pos += drop;
                break;
            };
            self.discard(off);
            pos += off;
            if self.pending.len() - pos < FRAME_LEN {
                break;
            }
            match parse_frame(&self.pending[pos..pos + FRAME_LEN]) {
                Some(f) => {
                    frames.push(f);
                    self.stats.frames += 1;
                    self.discarding = false;
                    pos += FRAME_LEN;
                }
                None => {
                    // Drop only the marker's first byte; a real frame may
                    // start inside the rejected one.
                    self.discard(1);
                    pos += 1;
                }
            }
        }
        self.pending.drain(..pos);
        frames
    }

    /// Ends the stream, discarding any incomplete trailing frame.
    pub fn finish(mut self) -> DecodeStats {
        let n = self.pending.len();
        self.discard(n);
        self.pending.clear();
        self.stats
    }
}

/// Result of decoding a complete byte stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedStream {
    pub frames: Vec<SampleFrame>,
    pub stats: DecodeStats,
}

impl DecodedStream {
    pub fn resync_events(&self) -> u64 {
        self.stats.resync_events
    }
}

/// Decodes a whole stream; never fails, corruption shows up in the stats.
pub fn decode_stream(bytes: &[u8]) -> DecodedStream {
    let mut dec = FrameDecoder::new();
    let frames = dec.push(bytes);
    DecodedStream {
        frames,
        stats: dec.finish(),
    }
}
