//! File-level jobs behind the CLI: manifests, staged output directories and
//! JSONL provenance sidecars.
//!
//! Outputs are first written to a staging directory inside `--out-dir` and
//! moved into place only after the whole job succeeded, so a failed run
//! leaves no partial results behind.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::audio::AudioBuffer;
use crate::augment::{augment_one, Method, PasConfig};
use crate::error::{Error, Result};
use crate::features::{encode_lmel, MelConfig, MelExtractor};
use crate::synth::{plan_jobs, synthesize_one, validate_grid, SynthJob};
use crate::wav::{encode_wav, load_wav};

pub const AUGMENT_SIDECAR: &str = "augment.jsonl";
pub const TESTSET_SIDECAR: &str = "testset.jsonl";
pub const FEATURES_SIDECAR: &str = "features.jsonl";

/// Read a UTF-8 manifest with one path per line. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Every `.wav` file under `dir`, recursively, in sorted path order.
pub fn list_wavs(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir.as_ref(), &mut out)?;
    out.sort();
    Ok(out)
}

/// Load a WAV and require the given sample rate.
pub fn load_at_rate(path: &Path, sample_rate: u32) -> Result<AudioBuffer> {
    let buf = load_wav(path)?;
    if buf.sample_rate() != sample_rate {
        return Err(Error::SampleRateMismatch {
            expected: sample_rate,
            found: buf.sample_rate(),
        });
    }
    Ok(buf)
}

pub fn load_catalog(paths: &[PathBuf], sample_rate: u32) -> Result<Vec<AudioBuffer>> {
    if paths.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    paths
        .par_iter()
        .map(|p| load_at_rate(p, sample_rate))
        .collect()
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

fn unique_stems(paths: &[PathBuf]) -> Result<Vec<String>> {
    let stems: Vec<String> = paths.iter().map(|p| stem(p)).collect();
    let mut seen = HashSet::new();
    for (s, p) in stems.iter().zip(paths) {
        if !seen.insert(s.as_str()) {
            return Err(Error::config(
                "inputs",
                format!("duplicate file stem `{s}` ({})", p.display()),
            ));
        }
    }
    Ok(stems)
}

/// Staging directory inside the output directory. Dropping without
/// [`OutputStage::commit`] discards everything written.
pub struct OutputStage {
    out_dir: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl OutputStage {
    pub fn create(out_dir: impl AsRef<Path>) -> Result<Self> {
        let out_dir = out_dir.as_ref().to_path_buf();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let staging = out_dir.join(format!(".staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Self {
            out_dir,
            staging,
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<()> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| Error::io(&path, e.into()))?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Move every staged file into the output directory.
    pub fn commit(mut self) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(&self.staging)
            .map_err(|e| Error::io(&self.staging, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&self.staging, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for src in entries {
            let dst = self.out_dir.join(src.file_name().expect("staged file name"));
            fs::rename(&src, &dst).map_err(|e| Error::io(&dst, e))?;
        }
        fs::remove_dir(&self.staging).map_err(|e| Error::io(&self.staging, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for OutputStage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// One line of an `augment` or `synth-testset` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceRecord {
    pub index: u64,
    pub input: String,
    pub output: Option<String>,
    /// `pas`, `traditional`, or `none` for pass-through samples.
    pub method: String,
    pub noise: Option<String>,
    #[serde(rename = "L_s")]
    pub speech_len: Option<usize>,
    #[serde(rename = "P_s")]
    pub speech_pos: Option<usize>,
    pub snr_db: Option<f64>,
    pub noise_gain: Option<f64>,
    pub noise_offset: Option<usize>,
    pub speech_offset: Option<usize>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProvenanceRecord {
    fn failed(index: u64, input: &Path, seed: u64, method: &str, err: &Error) -> Self {
        Self {
            index,
            input: input.display().to_string(),
            output: None,
            method: method.to_owned(),
            noise: None,
            speech_len: None,
            speech_pos: None,
            snr_db: None,
            noise_gain: None,
            noise_offset: None,
            speech_offset: None,
            seed,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct JobSummary {
    pub outputs: usize,
    pub failures: usize,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))
}

/// Split per-item results into records, failing on the first error (in
/// index order) unless `skip_errors` is set.
fn settle<T>(
    results: Vec<Result<Vec<T>>>,
    skip_errors: bool,
    on_failure: impl Fn(usize, &Error) -> T,
) -> Result<(Vec<T>, JobSummary)> {
    let mut records = Vec::new();
    let mut summary = JobSummary::default();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(mut rs) => {
                summary.outputs += rs.len();
                records.append(&mut rs);
            }
            Err(e) if skip_errors => {
                summary.failures += 1;
                records.push(on_failure(i, &e));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((records, summary))
}

#[derive(Debug, Clone)]
pub struct AugmentJob {
    pub inputs: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub config: PasConfig,
    pub method: Method,
    pub sample_rate: u32,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub skip_errors: bool,
}

/// Augment every input file, writing `<stem>.pas.wav` files and the
/// `augment.jsonl` sidecar.
pub fn run_augment(job: &AugmentJob) -> Result<JobSummary> {
    job.config.validate()?;
    let pool = thread_pool(job.jobs)?;
    let stems = unique_stems(&job.inputs)?;
    let seed = job.config.master_seed;
    pool.install(|| {
        let catalog = load_catalog(&job.noise, job.sample_rate)?;
        let stage = OutputStage::create(&job.out_dir)?;
        let results: Vec<Result<Vec<ProvenanceRecord>>> = job
            .inputs
            .par_iter()
            .zip(&stems)
            .enumerate()
            .map(|(i, (path, stem))| {
                let x = load_at_rate(path, job.sample_rate)?;
                let sample = augment_one(i as u64, &x, &catalog, &job.config, job.method)?;
                let name = format!("{stem}.pas.wav");
                stage.write(&name, &encode_wav(&sample.audio))?;
                let p = sample.placement;
                Ok(vec![ProvenanceRecord {
                    index: i as u64,
                    input: path.display().to_string(),
                    output: Some(name),
                    method: p.map_or("none".into(), |_| job.method.to_string()),
                    noise: p.map(|p| job.noise[p.noise_index].display().to_string()),
                    speech_len: p.map(|p| p.speech_len),
                    speech_pos: p.map(|p| p.speech_pos),
                    snr_db: p.map(|p| p.snr_db),
                    noise_gain: p.map(|p| p.noise_gain),
                    noise_offset: p.map(|p| p.noise_offset),
                    speech_offset: Some(sample.source_offset),
                    seed,
                    error: None,
                }])
            })
            .collect();
        let method = job.method.to_string();
        let (records, summary) = settle(results, job.skip_errors, |i, e| {
            ProvenanceRecord::failed(i as u64, &job.inputs[i], seed, &method, e)
        })?;
        stage.write_jsonl(AUGMENT_SIDECAR, &records)?;
        stage.commit()?;
        Ok(summary)
    })
}

#[derive(Debug, Clone)]
pub struct SynthTestsetJob {
    pub clean: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub snr_grid: Vec<f64>,
    pub seed: u64,
    pub sample_rate: u32,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub skip_errors: bool,
}

/// File name for one synthesized output, e.g. `id001.snr5.wav`.
pub fn testset_name(stem: &str, snr_db: f64) -> String {
    format!("{stem}.snr{snr_db}.wav")
}

/// Mix every clean file at every grid SNR, writing `<stem>.snr<snr>.wav`
/// files and the `testset.jsonl` sidecar.
pub fn run_synth_testset(job: &SynthTestsetJob) -> Result<JobSummary> {
    validate_grid(&job.snr_grid)?;
    if job.clean.is_empty() {
        return Err(Error::config("clean", "manifest lists no utterances"));
    }
    let pool = thread_pool(job.jobs)?;
    let stems = unique_stems(&job.clean)?;
    let grid = &job.snr_grid;
    pool.install(|| {
        let catalog = load_catalog(&job.noise, job.sample_rate)?;
        let stage = OutputStage::create(&job.out_dir)?;
        let jobs: Vec<SynthJob> = plan_jobs(job.clean.len(), grid).collect();
        let results: Vec<Result<Vec<ProvenanceRecord>>> = jobs
            .par_chunks(grid.len())
            .map(|utt_jobs| {
                let u = utt_jobs[0].utterance;
                let path = &job.clean[u];
                let x = load_at_rate(path, job.sample_rate)?;
                utt_jobs
                    .iter()
                    .map(|&sj| {
                        let out = synthesize_one(sj, &x, &catalog, job.seed)?;
                        let name = testset_name(&stems[u], sj.snr_db);
                        stage.write(&name, &encode_wav(&out.audio))?;
                        let r = out.record;
                        Ok(ProvenanceRecord {
                            index: r.index,
                            input: path.display().to_string(),
                            output: Some(name),
                            method: Method::Traditional.to_string(),
                            noise: Some(job.noise[r.noise_index].display().to_string()),
                            speech_len: Some(r.len),
                            speech_pos: Some(0),
                            snr_db: Some(r.snr_db),
                            noise_gain: Some(r.noise_gain),
                            noise_offset: Some(r.noise_offset),
                            speech_offset: Some(0),
                            seed: job.seed,
                            error: None,
                        })
                    })
                    .collect()
            })
            .collect();
        let (records, summary) = settle(results, job.skip_errors, |u, e| {
            ProvenanceRecord::failed(
                (u * grid.len()) as u64,
                &job.clean[u],
                job.seed,
                "traditional",
                e,
            )
        })?;
        stage.write_jsonl(TESTSET_SIDECAR, &records)?;
        stage.commit()?;
        Ok(summary)
    })
}

#[derive(Debug, Clone)]
pub struct FeaturesJob {
    pub inputs: Vec<PathBuf>,
    pub config: MelConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub skip_errors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRecord {
    pub index: u64,
    pub input: String,
    pub output: Option<String>,
    pub n_frames: Option<usize>,
    pub n_mels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Extract log-Mel features for every input as `<stem>.lmel`.
pub fn run_features(job: &FeaturesJob) -> Result<JobSummary> {
    let extractor = MelExtractor::new(job.config)?;
    let pool = thread_pool(job.jobs)?;
    let stems = unique_stems(&job.inputs)?;
    pool.install(|| {
        let stage = OutputStage::create(&job.out_dir)?;
        let results: Vec<Result<Vec<FeatureRecord>>> = job
            .inputs
            .par_iter()
            .zip(&stems)
            .enumerate()
            .map(|(i, (path, stem))| {
                let x = load_at_rate(path, job.config.sample_rate)?;
                let mel = extractor.log_mel(&x)?;
                let name = format!("{stem}.lmel");
                stage.write(&name, &encode_lmel(&mel.data))?;
                Ok(vec![FeatureRecord {
                    index: i as u64,
                    input: path.display().to_string(),
                    output: Some(name),
                    n_frames: Some(mel.n_frames()),
                    n_mels: Some(mel.n_mels()),
                    error: None,
                }])
            })
            .collect();
        let (records, summary) = settle(results, job.skip_errors, |i, e| FeatureRecord {
            index: i as u64,
            input: job.inputs[i].display().to_string(),
            output: None,
            n_frames: None,
            n_mels: None,
            error: Some(e.to_string()),
        })?;
        stage.write_jsonl(FEATURES_SIDECAR, &records)?;
        stage.commit()?;
        Ok(summary)
    })
}
