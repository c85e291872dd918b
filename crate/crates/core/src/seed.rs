//! Deterministic derivation of random sub-streams from a single root seed.
//!
//! Every consumer of randomness asks for a stream keyed by a path of tags
//! (role, sample index, step, ...). Streams depend only on the root seed and
//! the path, never on scheduling, so parallel generation is reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for every random stream in the crate.
pub type Rng = ChaCha8Rng;

/// Role tags separating seed domains. Evaluation sets never share a stream
/// with anything used in training.
pub mod role {
    pub const TRAIN_SET: u64 = 0x7261_696e;
    pub const EVAL_SET: u64 = 0x6576_616c;
    pub const GAINS: u64 = 1;
    pub const ESTIMATE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const PRETRAIN: u64 = 4;
    pub const JOINT: u64 = 5;
    pub const LOCAL: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const DROPOUT: u64 = 8;
    pub const SWEEP_POINT: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of tags into a child seed.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Opens the stream for `path` under `root`.
pub fn stream(root: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(root, path))
}
