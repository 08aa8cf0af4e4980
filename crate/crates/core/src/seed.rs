//! Seed fan-out: one experiment seed, independent streams per purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for a named purpose ("split", "init", "shuffle", ...).
///
/// Stable across platforms and releases: only the seed and the purpose bytes
/// enter the mix.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut state = splitmix64(seed);
    for byte in purpose.bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    state
}

pub fn rng_for(seed: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}
