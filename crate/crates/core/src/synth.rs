//! Noisy evaluation-set synthesis: every clean utterance mixed with a
//! full-duration noise clip at every SNR of a grid.
//!
//! Output `index = utterance · |grid| + grid_position` selects the random
//! stream for the noise choice, so results do not depend on scheduling.

use rand::Rng;
use rayon::prelude::*;

use crate::audio::{ensure_min_len, sample_segment, AudioBuffer};
use crate::augment::apply_traditional;
use crate::error::{Error, Result};
use crate::rng::sample_stream;

pub const DEFAULT_SNR_GRID: [f64; 5] = [0.0, 5.0, 10.0, 15.0, 20.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthJob {
    pub index: u64,
    pub utterance: usize,
    pub snr_db: f64,
}

/// All `(utterance, snr)` combinations in output order.
pub fn plan_jobs(n_utterances: usize, grid: &[f64]) -> impl Iterator<Item = SynthJob> + '_ {
    (0..n_utterances).flat_map(move |u| {
        grid.iter().enumerate().map(move |(j, &snr_db)| SynthJob {
            index: (u * grid.len() + j) as u64,
            utterance: u,
            snr_db,
        })
    })
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config("snr_grid", "must contain at least one SNR"));
    }
    if let Some(bad) = grid.iter().find(|v| !v.is_finite()) {
        return Err(Error::config("snr_grid", format!("non-finite SNR {bad}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthRecord {
    pub index: u64,
    pub utterance: usize,
    pub noise_index: usize,
    /// Start of the clip inside the loop-padded noise file.
    pub noise_offset: usize,
    pub snr_db: f64,
    pub noise_gain: f64,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub record: SynthRecord,
    pub audio: AudioBuffer,
}

/// Mix one clean utterance for `job`.
pub fn synthesize_one(
    job: SynthJob,
    clean: &AudioBuffer,
    catalog: &[AudioBuffer],
    seed: u64,
) -> Result<SynthOutput> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    let mut rng = sample_stream(seed, job.index);
    let noise_index = rng.gen_range(0..catalog.len());
    let noise = ensure_min_len(&catalog[noise_index], clean.len());
    let noise_offset = rng.gen_range(0..=noise.len() - clean.len());
    let clip = sample_segment(&noise, clean.len(), noise_offset)?;
    let mixed = apply_traditional(clean, &clip, job.snr_db)?;
    Ok(SynthOutput {
        record: SynthRecord {
            index: job.index,
            utterance: job.utterance,
            noise_index,
            noise_offset,
            snr_db: job.snr_db,
            noise_gain: mixed.noise_gain,
            len: clean.len(),
        },
        audio: mixed.audio,
    })
}

/// Synthesize `|clean| × |grid|` noisy utterances in output order.
pub fn synth_testset(
    clean: &[AudioBuffer],
    catalog: &[AudioBuffer],
    grid: &[f64],
    seed: u64,
) -> Result<Vec<SynthOutput>> {
    validate_grid(grid)?;
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if clean.is_empty() {
        return Err(Error::config("clean", "no clean utterances"));
    }
    let jobs: Vec<SynthJob> = plan_jobs(clean.len(), grid).collect();
    jobs.into_par_iter()
        .map(|job| synthesize_one(job, &clean[job.utterance], catalog, seed))
        .collect()
}
