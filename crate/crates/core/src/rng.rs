//! Seed substreams.
//!
//! Every consumer of randomness in the crate takes a `(seed, stream)` pair and
//! builds its own ChaCha generator, so results never depend on evaluation
//! order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of identifiers into a single seed. `derive_seed(s, &[])` is `s`.
pub fn derive_seed(seed: u64, ids: &[u64]) -> u64 {
    ids.iter()
        .fold(seed, |acc, &id| splitmix64(acc ^ splitmix64(id)))
}
