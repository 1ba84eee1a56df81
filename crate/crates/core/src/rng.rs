//! Seeded random number generation.
//!
//! Every stochastic step in the crate draws from a [`ChaCha8Rng`] seeded
//! through [`seeded`]. Sub-streams (per epoch, per sample) are keyed with
//! [`derive`] so that they stay independent of how many draws the parent
//! stream has made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `key` into `seed` with a splitmix64 finalizer.
pub fn derive(seed: u64, key: u64) -> u64 {
    let mut z = seed ^ key.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
