//! Seeded random number generation shared by every stochastic step.
//!
//! ChaCha8 gives a stream that is stable across platforms and releases, which
//! the byte-for-byte reproducibility of reports depends on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
