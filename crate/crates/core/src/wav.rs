//! RIFF/WAVE reader and writer for 16-bit mono PCM.
//!
//! Samples map to floating amplitude by division by 32768. The reader skips
//! unknown chunks that precede `data`; the writer always emits the canonical
//! 44-byte header.

use std::fs;
use std::path::Path;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;
const SCALE: f64 = 32768.0;
pub const HEADER_LEN: usize = 44;

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn save_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buf)).map_err(|e| Error::io(path, e))
}

/// Clamp to `[-1, 1]` and round to the nearest int16 step.
pub fn quantize(sample: f64) -> i16 {
    (sample.clamp(-1.0, 1.0) * SCALE)
        .round()
        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
}

pub fn dequantize(sample: i16) -> f64 {
    f64::from(sample) / SCALE
}

pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.len() * 2;
    let sr = buf.sample_rate();
    let mut out = Vec::with_capacity(HEADER_LEN + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sr.to_le_bytes());
    out.extend_from_slice(&(sr * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buf.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::CorruptHeader("missing RIFF/WAVE signature".into()));
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(Error::CorruptHeader("no data chunk".into()));
        }
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::CorruptHeader(format!(
                    "chunk `{}` claims {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::CorruptHeader("fmt chunk shorter than 16 bytes".into()));
                }
                format = Some(Format {
                    code: le_u16(&body[0..2]),
                    channels: le_u16(&body[2..4]),
                    sample_rate: le_u32(&body[4..8]),
                    bits: le_u16(&body[14..16]),
                });
            }
            b"data" => {
                let fmt = format
                    .ok_or_else(|| Error::CorruptHeader("data chunk before fmt chunk".into()))?;
                check_format(&fmt)?;
                if !body.len().is_multiple_of(2) {
                    return Err(Error::CorruptHeader("odd data chunk length".into()));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| dequantize(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(AudioBuffer::from_trusted(samples, fmt.sample_rate));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
}

fn check_format(fmt: &Format) -> Result<()> {
    if fmt.code != PCM_FORMAT {
        return Err(Error::UnsupportedFormat(format!(
            "format code {} (only PCM 1 is supported)",
            fmt.code
        )));
    }
    if fmt.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (only mono is supported)",
            fmt.channels
        )));
    }
    if fmt.bits != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}-bit samples (only 16-bit is supported)",
            fmt.bits
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(Error::CorruptHeader("zero sample rate".into()));
    }
    Ok(())
}
