//! The `pas` command line: `augment`, `synth-testset`, `features`, `eer` and
//! `pca`.
//!
//! Settings are resolved as command-line flag, then the command's table in
//! the `--config` TOML file, then the file's top-level keys, then built-in
//! defaults. The seed additionally falls back to `PAS_SEED` before the
//! default of 0.
//!
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 on
//! filesystem errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::augment::{self, Method, PasConfig};
use crate::error::{Error, Result};
use crate::eval::{eer_from_scores, read_scores};
use crate::features::{self, MelConfig};
use crate::pca::{pca_project, read_embedding_matrix, read_labels, write_projection, EmbeddingSet};
use crate::pipeline::{
    list_wavs, read_manifest, run_augment, run_features, run_synth_testset, AugmentJob,
    FeaturesJob, JobSummary, SynthTestsetJob,
};
use crate::synth::DEFAULT_SNR_GRID;

pub const SEED_ENV: &str = "PAS_SEED";
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pas", version, about = "Partial additive speech augmentation and evaluation tools")]
struct Cli {
    /// TOML file with default settings
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mix noise into training utterances (PAS or traditional)
    Augment(AugmentArgs),
    /// Build a noisy test set over an SNR grid
    SynthTestset(SynthArgs),
    /// Extract log-Mel spectrograms as LMEL matrices
    Features(FeaturesArgs),
    /// Equal error rate of a `label score` file
    Eer(EerArgs),
    /// Project embeddings onto principal components
    Pca(PcaArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Random seed (falls back to $PAS_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this
    #[arg(long)]
    jobs: Option<usize>,
    /// Required sample rate of every input file
    #[arg(long)]
    sample_rate: Option<u32>,
    /// Record per-file failures in the sidecar instead of aborting
    #[arg(long)]
    skip_errors: bool,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Text file with one input WAV path per line
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory searched recursively for noise WAVs
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    /// Text file listing noise WAVs (alternative to --noise-dir)
    #[arg(long)]
    noise_manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// `pas` or `traditional`
    #[arg(long)]
    method: Option<String>,
    /// Output and noise clip length L_n, seconds
    #[arg(long)]
    ln_sec: Option<f64>,
    /// Minimum speech length L_s_min, seconds
    #[arg(long)]
    ls_min_sec: Option<f64>,
    /// SNR range `min:max` in dB
    #[arg(long)]
    snr: Option<String>,
    /// Probability that an utterance is mixed with noise
    #[arg(long)]
    mix_prob: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Text file with one clean WAV path per line
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    #[arg(long)]
    noise_manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated SNRs in dB
    #[arg(long)]
    snr_grid: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    fft_size: Option<usize>,
    /// Window length, seconds
    #[arg(long)]
    win_sec: Option<f64>,
    /// Hop length, seconds
    #[arg(long)]
    hop_sec: Option<f64>,
    #[arg(long)]
    n_mels: Option<usize>,
    #[arg(long)]
    fmin: Option<f64>,
    #[arg(long)]
    fmax: Option<f64>,
    #[arg(long)]
    log_floor: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EerArgs {
    /// File with `label score` per line (label 1 = target, 0 = nontarget)
    #[arg(long)]
    scores: PathBuf,
}

#[derive(Debug, Args)]
struct PcaArgs {
    /// LMEL matrix or headerless numeric CSV, one embedding per row
    #[arg(long)]
    embeddings: PathBuf,
    /// One label per line
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
}

/// Parsed `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub sample_rate: Option<u32>,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub synth_testset: SynthSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub pca: PcaSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub sample_rate: Option<u32>,
    pub manifest: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub method: Option<String>,
    pub ln_sec: Option<f64>,
    pub ls_min_sec: Option<f64>,
    pub snr_min: Option<f64>,
    pub snr_max: Option<f64>,
    pub mix_prob: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub sample_rate: Option<u32>,
    pub manifest: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub noise_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub snr_grid: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub jobs: Option<usize>,
    pub sample_rate: Option<u32>,
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub fft_size: Option<usize>,
    pub win_sec: Option<f64>,
    pub hop_sec: Option<f64>,
    pub n_mels: Option<usize>,
    pub fmin: Option<f64>,
    pub fmax: Option<f64>,
    pub log_floor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSection {
    pub k: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Run the CLI on `argv` (including the program name) and return the exit
/// status. Never panics on bad input.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Augment(a) => augment(a, &config),
        Command::SynthTestset(a) => synth_testset(a, &config),
        Command::Features(a) => features(a, &config),
        Command::Eer(a) => eer(a),
        Command::Pca(a) => pca(a, &config),
    }
}

fn resolve_seed(flag: Option<u64>, section: Option<u64>, top: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(section).or(top) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config("seed", format!("{SEED_ENV}=`{v}` is not a u64"))),
        Err(_) => Ok(0),
    }
}

fn required<T>(value: Option<T>, field: &'static str) -> Result<T> {
    value.ok_or_else(|| Error::config(field, "is required"))
}

fn parse_snr_range(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::config("snr", format!("expected `min:max`, got `{s}`"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::config("snr_grid", format!("bad SNR `{v}`")))
        })
        .collect()
}

fn noise_paths(dir: Option<PathBuf>, manifest: Option<PathBuf>) -> Result<Vec<PathBuf>> {
    let paths = match (dir, manifest) {
        (Some(_), Some(_)) => {
            return Err(Error::config("noise_dir", "give either --noise-dir or --noise-manifest"))
        }
        (Some(d), None) => list_wavs(d)?,
        (None, Some(m)) => read_manifest(m)?,
        (None, None) => return Err(Error::config("noise_dir", "is required")),
    };
    if paths.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    Ok(paths)
}

fn report(summary: JobSummary, out_dir: &Path) {
    println!(
        "wrote {} outputs to {} ({} failures)",
        summary.outputs,
        out_dir.display(),
        summary.failures
    );
}

fn augment(a: AugmentArgs, cfg: &RunConfig) -> Result<()> {
    let s = &cfg.augment;
    let sample_rate = a.common.sample_rate.or(s.sample_rate).or(cfg.sample_rate).unwrap_or(DEFAULT_SAMPLE_RATE);
    let (snr_min, snr_max) = match &a.snr {
        Some(r) => parse_snr_range(r)?,
        None => (
            s.snr_min.unwrap_or(augment::DEFAULT_SNR_MIN_DB),
            s.snr_max.unwrap_or(augment::DEFAULT_SNR_MAX_DB),
        ),
    };
    let method: Method = a.method.as_deref().or(s.method.as_deref()).unwrap_or("pas").parse()?;
    let ln_sec = a.ln_sec.or(s.ln_sec).unwrap_or(augment::DEFAULT_NOISE_SECS);
    let ls_min_sec = a.ls_min_sec.or(s.ls_min_sec).unwrap_or(augment::DEFAULT_MIN_SPEECH_SECS);
    let config = PasConfig {
        noise_len: augment::seconds_to_samples(ln_sec, sample_rate, "ln_sec")?,
        min_speech_len: augment::seconds_to_samples(ls_min_sec, sample_rate, "ls_min_sec")?,
        snr_min,
        snr_max,
        mix_probability: a.mix_prob.or(s.mix_prob).unwrap_or(augment::DEFAULT_MIX_PROBABILITY),
        master_seed: resolve_seed(a.common.seed, s.seed, cfg.seed)?,
    };
    config.validate()?;
    let jobs = a.common.jobs.or(s.jobs).or(cfg.jobs).unwrap_or(1);
    let out_dir = required(a.out_dir.or(s.out_dir.clone()), "out_dir")?;
    let manifest = required(a.manifest.or(s.manifest.clone()), "manifest")?;
    let inputs = read_manifest(manifest)?;
    let noise = noise_paths(
        a.noise_dir.or(s.noise_dir.clone()),
        a.noise_manifest.or(s.noise_manifest.clone()),
    )?;
    let summary = run_augment(&AugmentJob {
        inputs,
        noise,
        config,
        method,
        sample_rate,
        out_dir: out_dir.clone(),
        jobs,
        skip_errors: a.common.skip_errors,
    })?;
    report(summary, &out_dir);
    Ok(())
}

fn synth_testset(a: SynthArgs, cfg: &RunConfig) -> Result<()> {
    let s = &cfg.synth_testset;
    let sample_rate = a.common.sample_rate.or(s.sample_rate).or(cfg.sample_rate).unwrap_or(DEFAULT_SAMPLE_RATE);
    let snr_grid = match &a.snr_grid {
        Some(g) => parse_grid(g)?,
        None => s.snr_grid.clone().unwrap_or_else(|| DEFAULT_SNR_GRID.to_vec()),
    };
    crate::synth::validate_grid(&snr_grid)?;
    let seed = resolve_seed(a.common.seed, s.seed, cfg.seed)?;
    let jobs = a.common.jobs.or(s.jobs).or(cfg.jobs).unwrap_or(1);
    let out_dir = required(a.out_dir.or(s.out_dir.clone()), "out_dir")?;
    let clean = read_manifest(required(a.manifest.or(s.manifest.clone()), "manifest")?)?;
    let noise = noise_paths(
        a.noise_dir.or(s.noise_dir.clone()),
        a.noise_manifest.or(s.noise_manifest.clone()),
    )?;
    let summary = run_synth_testset(&SynthTestsetJob {
        clean,
        noise,
        snr_grid,
        seed,
        sample_rate,
        out_dir: out_dir.clone(),
        jobs,
        skip_errors: a.common.skip_errors,
    })?;
    report(summary, &out_dir);
    Ok(())
}

fn features(a: FeaturesArgs, cfg: &RunConfig) -> Result<()> {
    let s = &cfg.features;
    let sample_rate = a.common.sample_rate.or(s.sample_rate).or(cfg.sample_rate).unwrap_or(DEFAULT_SAMPLE_RATE);
    let win_sec = a.win_sec.or(s.win_sec).unwrap_or(features::DEFAULT_WIN_SECS);
    let hop_sec = a.hop_sec.or(s.hop_sec).unwrap_or(features::DEFAULT_HOP_SECS);
    let config = MelConfig {
        sample_rate,
        fft_size: a.fft_size.or(s.fft_size).unwrap_or(features::DEFAULT_FFT_SIZE),
        win_length: augment::seconds_to_samples(win_sec, sample_rate, "win_sec")?,
        hop_length: augment::seconds_to_samples(hop_sec, sample_rate, "hop_sec")?,
        n_mels: a.n_mels.or(s.n_mels).unwrap_or(features::DEFAULT_N_MELS),
        fmin: a.fmin.or(s.fmin).unwrap_or(features::DEFAULT_FMIN),
        fmax: a.fmax.or(s.fmax).unwrap_or(features::DEFAULT_FMAX),
        log_floor: a.log_floor.or(s.log_floor).unwrap_or(features::DEFAULT_LOG_FLOOR),
    };
    config.validate()?;
    let jobs = a.common.jobs.or(s.jobs).or(cfg.jobs).unwrap_or(1);
    let out_dir = required(a.out_dir.or(s.out_dir.clone()), "out_dir")?;
    let inputs = read_manifest(required(a.manifest.or(s.manifest.clone()), "manifest")?)?;
    let summary = run_features(&FeaturesJob {
        inputs,
        config,
        out_dir: out_dir.clone(),
        jobs,
        skip_errors: a.common.skip_errors,
    })?;
    report(summary, &out_dir);
    Ok(())
}

fn eer(a: EerArgs) -> Result<()> {
    let pairs = read_scores(&a.scores)?;
    let r = eer_from_scores(&pairs)?;
    println!("EER={:.4} THR={:.6}", r.eer * 100.0, r.threshold);
    Ok(())
}

fn pca(a: PcaArgs, cfg: &RunConfig) -> Result<()> {
    let k = a.k.or(cfg.pca.k).unwrap_or(2);
    let data = read_embedding_matrix(&a.embeddings)?;
    let labels = read_labels(&a.labels)?;
    let set = EmbeddingSet::new(data, labels)?;
    let projection = pca_project(&set, k)?;
    if projection.degenerate_gap {
        eprintln!("warning: near-equal eigenvalues; component axes are not unique");
    }
    if !projection.converged {
        eprintln!("warning: power iteration hit the iteration cap");
    }
    let mut partial = a.out.clone().into_os_string();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    write_projection(&projection.coords, set.labels(), &partial)?;
    fs::rename(&partial, &a.out).map_err(|e| Error::io(&a.out, e))?;
    let ratios: Vec<String> = projection
        .explained_variance_ratio
        .iter()
        .map(|r| format!("{r:.6}"))
        .collect();
    println!("explained_variance_ratio={}", ratios.join(","));
    Ok(())
}
