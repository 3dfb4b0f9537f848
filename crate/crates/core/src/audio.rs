//! Mono PCM container and the segment primitives shared by the mixing and
//! feature code.

use crate::error::{Error, Result};

/// Mono audio with floating amplitudes, nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::config(
                "samples",
                format!("non-finite value at index {i}"),
            ));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub(crate) fn from_trusted(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Borrow the samples covered by `span`.
    pub fn span(&self, span: SegmentSpan) -> &[f64] {
        &self.samples[span.start..span.end()]
    }
}

/// Half-open interval `[start, start + length)` inside a parent buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentSpan {
    pub start: usize,
    pub length: usize,
}

impl SegmentSpan {
    pub fn new(start: usize, length: usize, parent_len: usize) -> Result<Self> {
        if length == 0 || start.checked_add(length).is_none_or(|end| end > parent_len) {
            return Err(Error::OutOfRange {
                start,
                length,
                available: parent_len,
            });
        }
        Ok(Self { start, length })
    }

    pub fn end(&self) -> usize {
        self.start + self.length
    }
}

/// Copy `length` samples beginning at `start`.
pub fn sample_segment(buf: &AudioBuffer, length: usize, start: usize) -> Result<AudioBuffer> {
    let span = SegmentSpan::new(start, length, buf.len())?;
    Ok(AudioBuffer::from_trusted(
        buf.span(span).to_vec(),
        buf.sample_rate,
    ))
}

/// Tile `buf` end-to-end and truncate to exactly `length` samples.
///
/// An empty source yields silence of the requested length.
pub fn loop_pad(buf: &AudioBuffer, length: usize) -> AudioBuffer {
    let samples = if buf.is_empty() {
        vec![0.0; length]
    } else {
        buf.samples.iter().copied().cycle().take(length).collect()
    };
    AudioBuffer::from_trusted(samples, buf.sample_rate)
}

/// Loop-pad only when `buf` is shorter than `min_len`.
pub fn ensure_min_len(buf: &AudioBuffer, min_len: usize) -> std::borrow::Cow<'_, AudioBuffer> {
    if buf.len() >= min_len {
        std::borrow::Cow::Borrowed(buf)
    } else {
        std::borrow::Cow::Owned(loop_pad(buf, min_len))
    }
}
