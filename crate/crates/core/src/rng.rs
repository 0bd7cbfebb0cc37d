//! Deterministic random streams.
//!
//! Every consumer derives its generator from `(seed, stream)` so results never
//! depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used inside one scene.
pub mod purpose {
    pub const SCENE: u64 = 0;
    pub const SAM_SPLIT: u64 = 1;
    pub const SAMPLING: u64 = 2;
    pub const BENCH_RANDOM: u64 = 3;
    pub const PARAMS: u64 = 4;
    pub const NOISE: u64 = 5;
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Generator for `purpose` within scene `index` of a suite.
pub fn scene_stream(seed: u64, index: usize, purpose: u64) -> Rng {
    stream(seed, (index as u64) << 8 | purpose)
}

/// Seed for scene `index` of a suite seeded with `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    scene_stream(seed, index, purpose::SCENE).next_u64()
}
