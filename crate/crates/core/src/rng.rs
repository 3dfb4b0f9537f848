//! Counter-based per-sample random streams.
//!
//! Every sample index owns an independent ChaCha stream selected by
//! `(master_seed, index)`, so a sample's draws never depend on how many other
//! samples were processed before it or on which worker produced it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

pub fn sample_stream(master_seed: u64, index: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}
