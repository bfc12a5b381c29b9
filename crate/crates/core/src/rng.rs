//! Seeded RNG streams keyed by purpose.
//!
//! Each consumer draws from its own stream derived from `(seed, tag)`, so
//! changing how much randomness one stage consumes never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const FEATURE_MASK: &str = "feature-mask";
pub const EDGE_DROP: &str = "edge-drop";
pub const INIT: &str = "init";
pub const TRAIN: &str = "train";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// RNG stream for `tag` under `seed`.
pub fn stream(seed: u64, tag: &str) -> Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(tag))))
}
