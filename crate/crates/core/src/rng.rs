//! Seed derivation.
//!
//! Every random stream in a run is a `ChaCha8Rng` whose seed is derived from the
//! experiment seed and a path of integer labels, so results never depend on the
//! order in which workers happen to draw numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of labels into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn rng_for(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels used with [`derive_seed`].
pub mod stream {
    pub const WORLD: u64 = 1;
    pub const PROFILE: u64 = 2;
    pub const SUBJECT: u64 = 3;
    pub const TEST: u64 = 4;
    pub const SERVER: u64 = 5;
    pub const INIT: u64 = 6;
    pub const PRETRAIN: u64 = 7;
    pub const UNSUP: u64 = 8;
    pub const WEAK: u64 = 9;
    pub const PARTICIPATION: u64 = 10;
    pub const TRACE: u64 = 11;
    pub const FAILURE: u64 = 12;
    pub const SUPERVISED: u64 = 13;
    pub const FUSION: u64 = 14;
}
