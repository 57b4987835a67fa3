//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by the
//! run's 64-bit seed plus a path of labels, so sub-computations never share
//! a generator and results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_NOISE: u64 = 0x6e6f_6973;
pub const TAG_SURFACE: u64 = 0x7375_7266;
pub const TAG_SHAPE: u64 = 0x7368_6170;
pub const TAG_DENSE: u64 = 0x6465_6e73;
pub const TAG_JITTER: u64 = 0x6a69_7474;
pub const TAG_TRAIN: u64 = 0x7472_6169;
pub const TAG_TEST: u64 = 0x7465_7374;
pub const TAG_INIT: u64 = 0x696e_6974;
pub const TAG_SHUFFLE: u64 = 0x7368_7566;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a labelled sub-computation.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Generator for `(seed, labels)`.
pub fn rng_for(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}
