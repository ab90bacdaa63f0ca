//! Seed expansion. Every consumer of randomness gets its own ChaCha stream
//! keyed by the run seed, so adding a consumer never shifts another one's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Well-known stream identifiers.
pub mod stream {
    pub const INIT_WEIGHTS: u64 = 1;
    pub const BATCHES: u64 = 2;
    pub const CMF_INIT: u64 = 3;
    pub const SYNTH_FACTORS: u64 = 10;
    pub const SYNTH_SPARSITY: u64 = 11;
    pub const FOLDS: u64 = 12;
    pub const TEST_SUBSET: u64 = 13;
    pub const BO_INIT: u64 = 20;
    pub const BO_PROPOSE: u64 = 21;
    pub const BO_FIT: u64 = 22;
}

/// Counter-based RNG for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, e.g. one per BO step or per entity.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
