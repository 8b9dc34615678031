//! Deterministic per-component seeds split from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named streams split from a root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Pool = 1,
    Ga = 2,
    Vns = 3,
    Dual = 4,
    Augm = 5,
    Target = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of `stream` under `root`.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(root) ^ stream as u64) ^ index)
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}
