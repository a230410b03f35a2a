//! Seed-stream derivation.
//!
//! Every random draw in the crate comes from a `ChaCha12Rng` keyed by a root
//! seed plus a path of labels (trial index, purpose, group, ...). Streams are
//! independent of the order in which they are created, so parallel execution
//! reproduces sequential results bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

/// Purpose labels used when deriving per-trial streams.
pub mod purpose {
    pub const DATASET: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const MONTE_CARLO: u64 = 3;
    pub const PARAMS: u64 = 4;
    pub const CODE_SEARCH: u64 = 5;
    pub const DIAGNOSTIC: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of labels into a single 64-bit seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &label| splitmix64(acc ^ splitmix64(label)))
}

pub fn stream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, path))
}
