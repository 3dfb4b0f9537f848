//! Partial additive speech (PAS) and the traditional full-overlap additive
//! noise baseline.
//!
//! PAS places a randomly sized speech segment at a random position inside a
//! fixed-length noise clip:
//!
//! ```text
//!  0            P_s               P_s + L_s            L_n
//!  | g·noise     | speech + g·noise |        g·noise     |
//! ```
//!
//! The noise gain `g` is chosen so that the speech-to-noise power ratio over
//! the overlap region equals the drawn SNR. Mixed audio is never clipped in
//! memory.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{ensure_min_len, sample_segment, AudioBuffer, SegmentSpan};
use crate::error::{Error, Result};
use crate::rng::{sample_stream, SampleRng};

/// Noise clip length used for training crops, in seconds.
pub const DEFAULT_NOISE_SECS: f64 = 3.2;
/// Shortest speech segment PAS will place, in seconds.
pub const DEFAULT_MIN_SPEECH_SECS: f64 = 1.0;
pub const DEFAULT_SNR_MIN_DB: f64 = 0.0;
pub const DEFAULT_SNR_MAX_DB: f64 = 20.0;
/// Three out of every four utterances are mixed with noise.
pub const DEFAULT_MIX_PROBABILITY: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pas,
    Traditional,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pas => "pas",
            Method::Traditional => "traditional",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pas" => Ok(Method::Pas),
            "traditional" | "tan" => Ok(Method::Traditional),
            other => Err(Error::config(
                "method",
                format!("unknown method `{other}` (expected `pas` or `traditional`)"),
            )),
        }
    }
}

/// Augmentation hyperparameters. Lengths are in samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasConfig {
    /// Fixed output/noise length `L_n`.
    pub noise_len: usize,
    /// Minimum speech segment length `L_s_min`.
    pub min_speech_len: usize,
    pub snr_min: f64,
    pub snr_max: f64,
    pub mix_probability: f64,
    pub master_seed: u64,
}

impl PasConfig {
    /// 3.2 s clips, speech of at least 1 s, SNR in [0, 20] dB, 0.75 mixing
    /// probability.
    pub fn paper_defaults(sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            noise_len: seconds_to_samples(DEFAULT_NOISE_SECS, sample_rate, "noise_len")?,
            min_speech_len: seconds_to_samples(
                DEFAULT_MIN_SPEECH_SECS,
                sample_rate,
                "min_speech_len",
            )?,
            snr_min: DEFAULT_SNR_MIN_DB,
            snr_max: DEFAULT_SNR_MAX_DB,
            mix_probability: DEFAULT_MIX_PROBABILITY,
            master_seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_len == 0 {
            return Err(Error::config("noise_len", "must be at least 1 sample"));
        }
        if self.min_speech_len == 0 || self.min_speech_len > self.noise_len {
            return Err(Error::config(
                "min_speech_len",
                format!(
                    "must lie in [1, noise_len = {}], got {}",
                    self.noise_len, self.min_speech_len
                ),
            ));
        }
        if !self.snr_min.is_finite() {
            return Err(Error::config("snr_min", "must be finite"));
        }
        if !self.snr_max.is_finite() {
            return Err(Error::config("snr_max", "must be finite"));
        }
        if self.snr_min > self.snr_max {
            return Err(Error::config(
                "snr_min",
                format!(
                    "snr_min ({}) exceeds snr_max ({})",
                    self.snr_min, self.snr_max
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_probability) {
            return Err(Error::config(
                "mix_probability",
                format!("must lie in [0, 1], got {}", self.mix_probability),
            ));
        }
        Ok(())
    }
}

/// Convert a duration to a whole number of samples, rejecting fractional
/// results.
pub fn seconds_to_samples(secs: f64, sample_rate: u32, field: &'static str) -> Result<usize> {
    let exact = secs * f64::from(sample_rate);
    if !exact.is_finite() || exact < 0.0 {
        return Err(Error::config(field, format!("invalid duration {secs} s")));
    }
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-6 {
        return Err(Error::config(
            field,
            format!("{secs} s at {sample_rate} Hz is not a whole number of samples ({exact})"),
        ));
    }
    Ok(rounded as usize)
}

/// Random draws for one augmented utterance, before any gain is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasDraw {
    pub noise_index: usize,
    /// Start of the `L_n` window inside the (loop-padded) noise file.
    pub noise_offset: usize,
    /// Start of the `L_s` window inside the (loop-padded) utterance.
    pub speech_offset: usize,
    /// `L_s`
    pub speech_len: usize,
    /// `P_s`
    pub speech_pos: usize,
    pub snr_db: f64,
}

/// Realized draws plus the applied gain: the full provenance of one
/// augmented utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PasPlacement {
    pub noise_index: usize,
    pub noise_offset: usize,
    pub speech_offset: usize,
    pub speech_len: usize,
    pub speech_pos: usize,
    pub snr_db: f64,
    pub noise_gain: f64,
}

impl PasPlacement {
    fn from_draw(d: &PasDraw, noise_gain: f64) -> Self {
        Self {
            noise_index: d.noise_index,
            noise_offset: d.noise_offset,
            speech_offset: d.speech_offset,
            speech_len: d.speech_len,
            speech_pos: d.speech_pos,
            snr_db: d.snr_db,
            noise_gain,
        }
    }

    pub fn draw(&self) -> PasDraw {
        PasDraw {
            noise_index: self.noise_index,
            noise_offset: self.noise_offset,
            speech_offset: self.speech_offset,
            speech_len: self.speech_len,
            speech_pos: self.speech_pos,
            snr_db: self.snr_db,
        }
    }

    /// Region holding speech plus noise.
    pub fn overlap_span(&self) -> SegmentSpan {
        SegmentSpan {
            start: self.speech_pos,
            length: self.speech_len,
        }
    }

    /// Noise-only regions before and after the speech; empty ones are
    /// omitted.
    pub fn noise_only_spans(&self, noise_len: usize) -> Vec<SegmentSpan> {
        let tail_start = self.speech_pos + self.speech_len;
        let mut spans = Vec::with_capacity(2);
        if self.speech_pos > 0 {
            spans.push(SegmentSpan {
                start: 0,
                length: self.speech_pos,
            });
        }
        if tail_start < noise_len {
            spans.push(SegmentSpan {
                start: tail_start,
                length: noise_len - tail_start,
            });
        }
        spans
    }
}

/// Output of one pass through the augmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub audio: AudioBuffer,
    /// Absent when the utterance was passed through without noise.
    pub placement: Option<PasPlacement>,
    /// First input sample used: the crop start for pass-through samples,
    /// the speech segment start otherwise.
    pub source_offset: usize,
}

/// Result of full-overlap mixing.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub audio: AudioBuffer,
    pub noise_gain: f64,
}

/// Mean-square amplitude.
pub fn signal_power(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::DegenerateSignal("empty signal"));
    }
    let power = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    if power == 0.0 {
        return Err(Error::DegenerateSignal("signal has zero power"));
    }
    Ok(power)
}

/// Linear noise gain `g` such that `10·log10(speech_power / (g²·noise_power)) = snr_db`.
pub fn snr_gain(speech_power: f64, noise_power: f64, snr_db: f64) -> Result<f64> {
    if !(speech_power > 0.0 && speech_power.is_finite()) {
        return Err(Error::DegenerateSignal("speech power must be positive"));
    }
    if !(noise_power > 0.0 && noise_power.is_finite()) {
        return Err(Error::DegenerateSignal("noise power must be positive"));
    }
    let gain = (speech_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::DegenerateSignal("noise gain is not a positive finite number"));
    }
    Ok(gain)
}

fn check_rates(x: &AudioBuffer, n: &AudioBuffer) -> Result<()> {
    if x.sample_rate() != n.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: x.sample_rate(),
            found: n.sample_rate(),
        });
    }
    Ok(())
}

/// `speech[i] + gain·noise[i]`. Shared by both methods so they agree bit for bit.
fn add_scaled(speech: &[f64], noise: &[f64], gain: f64, out: &mut Vec<f64>) {
    out.extend(speech.iter().zip(noise).map(|(&s, &n)| s + gain * n));
}

fn overlap_gain(speech: &[f64], noise: &[f64], snr_db: f64) -> Result<f64> {
    let speech_power = signal_power(speech)?;
    let noise_power = signal_power(noise)?;
    snr_gain(speech_power, noise_power, snr_db)
}

/// Add SNR-scaled noise over the whole utterance. Noise power is measured on
/// the first `x.len()` samples of `n`.
pub fn apply_traditional(x: &AudioBuffer, n: &AudioBuffer, snr_db: f64) -> Result<Mixture> {
    check_rates(x, n)?;
    if n.len() < x.len() {
        return Err(Error::OutOfRange {
            start: 0,
            length: x.len(),
            available: n.len(),
        });
    }
    let noise = &n.samples()[..x.len()];
    let gain = overlap_gain(x.samples(), noise, snr_db)?;
    let mut out = Vec::with_capacity(x.len());
    add_scaled(x.samples(), noise, gain, &mut out);
    Ok(Mixture {
        audio: AudioBuffer::from_trusted(out, x.sample_rate()),
        noise_gain: gain,
    })
}

fn check_draw(cfg: &PasConfig, d: &PasDraw) -> Result<()> {
    if d.speech_len < cfg.min_speech_len || d.speech_len > cfg.noise_len {
        return Err(Error::config(
            "speech_len",
            format!(
                "{} outside [{}, {}]",
                d.speech_len, cfg.min_speech_len, cfg.noise_len
            ),
        ));
    }
    if d.speech_pos > cfg.noise_len - d.speech_len {
        return Err(Error::config(
            "speech_pos",
            format!("{} exceeds {}", d.speech_pos, cfg.noise_len - d.speech_len),
        ));
    }
    if !(d.snr_db >= cfg.snr_min && d.snr_db <= cfg.snr_max) {
        return Err(Error::config(
            "snr_db",
            format!("{} outside [{}, {}]", d.snr_db, cfg.snr_min, cfg.snr_max),
        ));
    }
    Ok(())
}

/// Synthesize one PAS sample from explicit draws.
///
/// `n` must hold `L_n` samples from `noise_offset`, and `x` must hold `L_s`
/// samples from `speech_offset`.
pub fn apply_pas(
    x: &AudioBuffer,
    n: &AudioBuffer,
    cfg: &PasConfig,
    draw: &PasDraw,
) -> Result<AugmentedSample> {
    cfg.validate()?;
    check_draw(cfg, draw)?;
    check_rates(x, n)?;
    let noise = sample_segment(n, cfg.noise_len, draw.noise_offset)?;
    let speech = sample_segment(x, draw.speech_len, draw.speech_offset)?;
    let noise = noise.samples();

    let overlap_end = draw.speech_pos + draw.speech_len;
    let overlap = &noise[draw.speech_pos..overlap_end];
    let gain = overlap_gain(speech.samples(), overlap, draw.snr_db)?;

    let mut out = Vec::with_capacity(cfg.noise_len);
    out.extend(noise[..draw.speech_pos].iter().map(|&v| gain * v));
    add_scaled(speech.samples(), overlap, gain, &mut out);
    out.extend(noise[overlap_end..].iter().map(|&v| gain * v));
    debug_assert_eq!(out.len(), cfg.noise_len);

    Ok(AugmentedSample {
        audio: AudioBuffer::from_trusted(out, x.sample_rate()),
        placement: Some(PasPlacement::from_draw(draw, gain)),
        source_offset: draw.speech_offset,
    })
}

/// Draw the random quantities for one augmented utterance.
///
/// Inputs shorter than `L_n` are treated as loop-padded to `L_n`, which is
/// what [`augment_one`] does before mixing. The traditional method always
/// yields `L_s = L_n` and `P_s = 0`.
pub fn draw_placement(
    cfg: &PasConfig,
    method: Method,
    rng: &mut SampleRng,
    noise_lens: &[usize],
    x_len: usize,
) -> Result<PasDraw> {
    if noise_lens.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let ln = cfg.noise_len;
    let noise_index = rng.gen_range(0..noise_lens.len());
    let noise_offset = rng.gen_range(0..=noise_lens[noise_index].max(ln) - ln);
    let speech_len = match method {
        Method::Pas => rng.gen_range(cfg.min_speech_len..=ln),
        Method::Traditional => ln,
    };
    let speech_offset = rng.gen_range(0..=x_len.max(ln) - speech_len);
    let snr_db = if cfg.snr_min == cfg.snr_max {
        cfg.snr_min
    } else {
        rng.gen_range(cfg.snr_min..=cfg.snr_max)
    };
    let speech_pos = match method {
        Method::Pas => rng.gen_range(0..=ln - speech_len),
        Method::Traditional => 0,
    };
    Ok(PasDraw {
        noise_index,
        noise_offset,
        speech_offset,
        speech_len,
        speech_pos,
        snr_db,
    })
}

/// Augment the utterance at position `index` of the corpus. The result
/// depends only on `(x, catalog, cfg, method, index)`.
pub fn augment_one(
    index: u64,
    x: &AudioBuffer,
    catalog: &[AudioBuffer],
    cfg: &PasConfig,
    method: Method,
) -> Result<AugmentedSample> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if x.is_empty() {
        return Err(Error::DegenerateSignal("empty utterance"));
    }
    let ln = cfg.noise_len;
    let mut rng = sample_stream(cfg.master_seed, index);
    let x = ensure_min_len(x, ln);

    if !rng.gen_bool(cfg.mix_probability) {
        let offset = rng.gen_range(0..=x.len() - ln);
        return Ok(AugmentedSample {
            audio: sample_segment(&x, ln, offset)?,
            placement: None,
            source_offset: offset,
        });
    }

    let noise_lens: Vec<usize> = catalog.iter().map(AudioBuffer::len).collect();
    let draw = draw_placement(cfg, method, &mut rng, &noise_lens, x.len())?;
    let noise = ensure_min_len(&catalog[draw.noise_index], ln);
    apply_pas(&x, &noise, cfg, &draw)
}

/// Augment every utterance of `batch` independently, in parallel on the
/// current rayon pool. Sample `i` uses the random stream `(master_seed, i)`.
pub fn augment_batch(
    batch: &[AudioBuffer],
    catalog: &[AudioBuffer],
    cfg: &PasConfig,
    method: Method,
) -> Result<Vec<AugmentedSample>> {
    cfg.validate()?;
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| augment_one(i as u64, x, catalog, cfg, method))
        .collect()
}
