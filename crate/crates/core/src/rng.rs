//! Named random sub-streams derived from one experiment seed.
//!
//! Each stage draws from its own ChaCha stream so that, for example, changing
//! the number of shuffles does not perturb weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Reinit = 3,
    ReplaySelect = 4,
    Split = 5,
    Mix = 6,
    Synth = 7,
}

/// RNG for `stream` at sub-index `index` (e.g. the increment step).
pub fn stream(seed: u64, which: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((which as u64) << 32) | u64::from(index));
    rng
}
