//! Seed derivation. Every stochastic step takes an explicit generator built
//! from `(master_seed, stream)` so runs are reproducible piece by piece.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// splitmix64 finalizer
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(master ^ mix64(stream))
}

pub fn rng_for(master: u64, stream: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// Stream identifier for a named purpose, e.g. `stream_id("dm-epoch", 3)`.
pub fn stream_id(tag: &str, index: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in tag.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
