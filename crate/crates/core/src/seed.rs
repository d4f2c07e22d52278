//! Named random streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_name(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3))
}

pub fn derive(root: u64, name: &str, index: u64) -> u64 {
    mix(mix(root ^ hash_name(name)).wrapping_add(mix(index)))
}

/// Independent generator for stream `name` (e.g. "rollout") and sub-index.
pub fn stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive(root, name, index))
}
