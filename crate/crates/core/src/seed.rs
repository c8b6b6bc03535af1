//! Seed derivation.
//!
//! Every random stream in the crate is keyed by a tuple of integers mixed
//! into one 64-bit seed, so work can be split across threads without the
//! results depending on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a list of keys into a single seed.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5EED_0F_5EED_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Stable 64-bit key for a string label.
pub fn label_key(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn rng_for(keys: &[u64]) -> Rng {
    Rng::seed_from_u64(mix(keys))
}
