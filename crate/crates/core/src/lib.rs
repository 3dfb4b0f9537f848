//! Partial additive speech (PAS) augmentation and speaker-verification
//! evaluation tools.
//!
//! The crate covers the data path end to end: WAV I/O, SNR-exact noise
//! mixing (PAS and full-overlap baseline), log-Mel features, noisy test-set
//! synthesis, EER scoring, PCA projection of embeddings, and small reference
//! implementations of attentive statistics pooling and squeeze-excitation
//! gating.

pub mod attention;
pub mod audio;
pub mod augment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod features;
pub mod pca;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod wav;

pub use audio::{loop_pad, sample_segment, AudioBuffer, SegmentSpan};
pub use augment::{
    apply_pas, apply_traditional, augment_batch, augment_one, draw_placement, signal_power,
    snr_gain, AugmentedSample, Method, Mixture, PasConfig, PasDraw, PasPlacement,
};
pub use error::{Error, Result};
pub use features::{log_mel, mel_filterbank, stft_power, MelConfig, MelExtractor, MelSpectrogram};
pub use wav::{load_wav, save_wav};

pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
