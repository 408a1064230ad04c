//! Seed derivation.
//!
//! Every random stream is derived from a root seed, a stage name and an index:
//! `splitmix64(splitmix64(root ^ fnv1a64(stage)) ^ index)`. Streams for
//! different stages or indices never share state, so re-running one stage does
//! not perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(root: u64, stage: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a64(stage)) ^ index)
}

pub fn rng_for(root: u64, stage: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, stage, index))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
