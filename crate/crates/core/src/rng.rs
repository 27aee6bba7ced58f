//! Seed derivation for reproducible, independently seeded streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used throughout the simulator. ChaCha output is stable across
/// platforms and crate versions, which the byte-identical CSV contract needs.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream labels into one seed.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(base), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn stream(base: u64, labels: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, labels))
}
