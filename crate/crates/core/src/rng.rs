//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Work that is split
//! into independent replicas draws from `substream(seed, index)`, so the result
//! does not depend on the order (or thread) in which replicas run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}
