//! Emulation of the sensor's acquisition path: 12-bit sampling, DMA double
//! buffering and the framed byte stream sent over the serial link.

pub mod adc;
pub mod buffer;
pub mod protocol;

use std::io::{Read, Write};

pub use adc::{frames_to_segment, quantize, quantize_from, raw_to_millivolts, AdcConfig, MAX_CODE, MID_SCALE};
pub use buffer::{
    stream_session, stream_session_threaded, BufferId, DoubleBuffer, FrameSink, FrameSource, PacedSink,
    StreamReport, DEFAULT_BUFFER_CAPACITY,
};
pub use protocol::{
    decode_stream, encode_frame, encode_frames, DecodeStats, DecodedStream, FrameDecoder, SampleFrame, FRAME_LEN,
    SYNC,
};

use crate::error::Result;
use crate::signal::{CorpusRecord, Label, SignalSegment, Volume};

/// Writes a segment as a raw frame stream.
pub fn write_frame_file(seg: &SignalSegment, adc: &AdcConfig, mut w: impl Write) -> Result<()> {
    let bytes = encode_frames(&quantize(seg, adc)?)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a raw frame stream back into millivolts, along with decoder stats.
pub fn read_frame_file(mut r: impl Read, adc: &AdcConfig) -> Result<(SignalSegment, DecodeStats)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let decoded = decode_stream(&bytes);
    Ok((frames_to_segment(&decoded.frames, adc)?, decoded.stats))
}

/// Quantises a corpus line into a frame stream.
pub fn record_to_frame_bytes(rec: &CorpusRecord, adc: &AdcConfig) -> Result<Vec<u8>> {
    let seg = SignalSegment::new(rec.fs, rec.channels.clone())?;
    encode_frames(&quantize(&seg, adc)?)
}

/// Decodes a frame stream into a corpus line carrying the given metadata.
pub fn frame_bytes_to_record(
    bytes: &[u8],
    adc: &AdcConfig,
    subject_id: &str,
    label: Label,
    volume: Volume,
) -> Result<(CorpusRecord, DecodeStats)> {
    let decoded = decode_stream(bytes);
    let seg = frames_to_segment(&decoded.frames, adc)?;
    Ok((
        CorpusRecord {
            subject_id: subject_id.to_string(),
            label,
            volume_ml: volume,
            fs: seg.sample_rate_hz,
            channels: seg.channels,
        },
        decoded.stats,
    ))
}
