//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded with
//! `derive_seed(master, keys)`, which folds each key into the master seed
//! through the SplitMix64 finalizer:
//!
//! ```text
//! s0 = splitmix64(master)
//! s(i+1) = splitmix64(s(i) ^ splitmix64(key(i) + 0x9E3779B97F4A7C15))
//! ```
//!
//! Streams keyed by distinct key tuples are independent for practical
//! purposes and do not depend on the order in which they are created.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(master), |s, &k| {
        splitmix64(s ^ splitmix64(k.wrapping_add(GOLDEN)))
    })
}

pub fn stream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, keys))
}

/// Stream tags keep unrelated uses of the same master seed apart.
pub mod tag {
    pub const PHANTOM: u64 = 1;
    pub const CENSOR: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
}
