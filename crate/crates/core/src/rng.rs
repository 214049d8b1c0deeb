//! Seed derivation for independent, order-free random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! root seed plus a path of stream identifiers (for example
//! `[NOISE, cloud_id, point_index]`). Two different paths give statistically
//! independent streams, and the value drawn for a given path never depends on
//! how many other streams were consumed before it, so parallel and sequential
//! generation produce identical bits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Keeping them in one place avoids accidental collisions.
pub mod tag {
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const SAMPLE: u64 = 0x7361_6d70;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SHAPE: u64 = 0x7368_6170;
    pub const RESAMPLE: u64 = 0x7265_736d;
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a stream path into a single 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(seed), |acc, &id| mix64(acc ^ mix64(id.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
