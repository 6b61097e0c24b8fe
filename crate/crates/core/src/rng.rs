//! Reproducible random streams.
//!
//! Every stochastic routine takes a master seed. Independent work units
//! (trial blocks, particles, grid points) draw from ChaCha streams selected by
//! a stream id, so results do not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Trials are simulated in blocks of this size, one stream per block.
pub const TRIAL_BLOCK: usize = 1024;

/// Generator for stream `stream` of the family keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive an independent master seed from `seed` and a label, for composing
/// seed families (e.g. one family per horizon or per experiment).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
