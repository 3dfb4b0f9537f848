//! Log-Mel spectrogram front end.
//!
//! Frames are taken without centering or padding, windowed with a periodic
//! Hamming window, zero-padded to the FFT size and reduced to a one-sided
//! power spectrum. HTK-style triangular mel filters are applied and the
//! result is floored and passed through the natural log.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::augment::seconds_to_samples;
use crate::error::{Error, Result};

pub const DEFAULT_FFT_SIZE: usize = 1024;
pub const DEFAULT_WIN_SECS: f64 = 0.025;
pub const DEFAULT_HOP_SECS: f64 = 0.010;
pub const DEFAULT_N_MELS: usize = 80;
pub const DEFAULT_FMIN: f64 = 20.0;
pub const DEFAULT_FMAX: f64 = 7600.0;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl MelConfig {
    /// 1024-point FFT, 25 ms Hamming window, 10 ms hop, 80 mel bands.
    pub fn paper_defaults(sample_rate: u32) -> Result<Self> {
        let cfg = Self {
            sample_rate,
            fft_size: DEFAULT_FFT_SIZE,
            win_length: seconds_to_samples(DEFAULT_WIN_SECS, sample_rate, "win_length")?,
            hop_length: seconds_to_samples(DEFAULT_HOP_SECS, sample_rate, "hop_length")?,
            n_mels: DEFAULT_N_MELS,
            fmin: DEFAULT_FMIN,
            fmax: DEFAULT_FMAX,
            log_floor: DEFAULT_LOG_FLOOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate", "must be positive"));
        }
        if self.fft_size < 2 {
            return Err(Error::config("fft_size", "must be at least 2"));
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return Err(Error::config(
                "win_length",
                format!("must lie in [1, fft_size = {}]", self.fft_size),
            ));
        }
        if self.hop_length == 0 {
            return Err(Error::config("hop_length", "must be positive"));
        }
        if self.n_mels == 0 {
            return Err(Error::config("n_mels", "must be positive"));
        }
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return Err(Error::config("fmin", "must satisfy 0 <= fmin < fmax"));
        }
        if self.fmax > nyquist {
            return Err(Error::config(
                "fmax",
                format!("{} Hz exceeds Nyquist frequency {nyquist} Hz", self.fmax),
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::config("log_floor", "must be a positive finite number"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

/// Number of full frames: `floor((n - win) / hop) + 1`, or `None` when the
/// signal is shorter than one window.
pub fn frame_count(n_samples: usize, win_length: usize, hop_length: usize) -> Option<usize> {
    (n_samples >= win_length).then(|| (n_samples - win_length) / hop_length + 1)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hamming window, `0.54 - 0.46·cos(2πk/N)`.
pub fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// `n_mels × (fft_size/2 + 1)` nonnegative weights.
    pub weights: Array2<f64>,
    pub centers_hz: Vec<f64>,
}

pub fn mel_filterbank(cfg: &MelConfig) -> Result<MelFilterbank> {
    cfg.validate()?;
    let (mel_lo, mel_hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let step = (mel_hi - mel_lo) / (cfg.n_mels + 1) as f64;
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();
    let bin_hz = f64::from(cfg.sample_rate) / cfg.fft_size as f64;

    let mut weights = Array2::zeros((cfg.n_mels, cfg.n_bins()));
    for (m, mut row) in weights.rows_mut().into_iter().enumerate() {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
    }
    Ok(MelFilterbank {
        weights,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// `n_frames × n_mels` natural-log energies.
    pub data: Array2<f64>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.data.ncols()
    }
}

/// Reusable extractor holding the window, filterbank and FFT plan for one
/// configuration. Shareable across threads.
#[derive(Clone)]
pub struct MelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filterbank: MelFilterbank,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            window: hamming(config.win_length),
            filterbank,
            fft,
            config,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn stft_power(&self, buf: &AudioBuffer) -> Result<Array2<f64>> {
        let cfg = &self.config;
        if buf.sample_rate() != cfg.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: cfg.sample_rate,
                found: buf.sample_rate(),
            });
        }
        let frames = frame_count(buf.len(), cfg.win_length, cfg.hop_length).ok_or(
            Error::TooShort {
                len: buf.len(),
                needed: cfg.win_length,
            },
        )?;
        let n_bins = cfg.n_bins();
        let mut power = Array2::zeros((frames, n_bins));
        let mut spectrum = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (t, mut row) in power.rows_mut().into_iter().enumerate() {
            let frame = &buf.samples()[t * cfg.hop_length..t * cfg.hop_length + cfg.win_length];
            for (slot, (s, w)) in spectrum.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(s * w, 0.0);
            }
            spectrum[cfg.win_length..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut spectrum, &mut scratch);
            for (p, c) in row.iter_mut().zip(&spectrum[..n_bins]) {
                *p = c.norm_sqr();
            }
        }
        Ok(power)
    }

    /// Mel energies before the log, `frames × n_mels`.
    pub fn mel_energies(&self, buf: &AudioBuffer) -> Result<Array2<f64>> {
        let power = self.stft_power(buf)?;
        Ok(power.dot(&self.filterbank.weights.t()))
    }

    pub fn log_mel(&self, buf: &AudioBuffer) -> Result<MelSpectrogram> {
        let floor = self.config.log_floor;
        let data = self.mel_energies(buf)?.mapv_into(|e| e.max(floor).ln());
        Ok(MelSpectrogram {
            data,
            config: self.config,
        })
    }
}

pub fn stft_power(buf: &AudioBuffer, cfg: &MelConfig) -> Result<Array2<f64>> {
    MelExtractor::new(*cfg)?.stft_power(buf)
}

pub fn log_mel(buf: &AudioBuffer, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(*cfg)?.log_mel(buf)
}

const LMEL_MAGIC: &[u8; 4] = b"LMEL";
const LMEL_HEADER_LEN: usize = 16;

/// Serialize a matrix as `LMEL`: 16-byte header (magic, u32 rows, u32 cols,
/// u32 reserved) followed by row-major little-endian f32 values.
pub fn encode_lmel(data: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(LMEL_HEADER_LEN + data.len() * 4);
    out.extend_from_slice(LMEL_MAGIC);
    out.extend_from_slice(&(data.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for row in data.rows() {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_lmel(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |message: &str| Error::Parse {
        source_name: "LMEL".into(),
        line: 0,
        message: message.into(),
    };
    if bytes.len() < LMEL_HEADER_LEN || &bytes[..4] != LMEL_MAGIC {
        return Err(bad("missing LMEL header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(4), word(8));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("matrix dimensions overflow"))?;
    let body = &bytes[LMEL_HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(&format!(
            "expected {expected} payload bytes for {rows}x{cols}, found {}",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))
}

pub fn write_lmel(data: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_lmel(data)).map_err(|e| Error::io(path, e))
}

pub fn read_lmel(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_lmel(&bytes)
}

/// Index of the largest entry, first on ties.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
