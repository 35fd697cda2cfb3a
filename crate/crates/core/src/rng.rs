//! Deterministic RNG streams.
//!
//! Every random stream in a simulation is derived from the master seed and a
//! short path of integers (trial index, grid index, stream tag), so results do
//! not depend on execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used by the harness.
pub mod tag {
    pub const TOPOLOGY: u64 = 1;
    pub const OCCUPANCY: u64 = 2;
    pub const SENSING: u64 = 3;
    pub const TREE: u64 = 4;
    pub const CONSENSUS: u64 = 5;
    pub const FADING: u64 = 6;
    pub const PLACEMENT: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of stream coordinates.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Returns an independent RNG for `(master, path...)`.
pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}
