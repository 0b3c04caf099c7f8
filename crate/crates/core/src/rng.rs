//! Deterministic random streams.
//!
//! Every randomized stage derives independent ChaCha8 streams from a single
//! `u64` seed: the generator is seeded with `seed_from_u64(seed)` and the
//! stream id selects a disjoint keystream, so per-slot / per-class work can be
//! reordered or parallelized without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a tag into a seed so that different stages using the same user seed
/// do not share keystreams.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
