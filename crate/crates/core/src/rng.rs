//! Seeded random sources and the seed-splitting rule used for replications
//! and Monte Carlo chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source used by every sampler in the crate.
pub type RandomSource = ChaCha8Rng;

/// Creates a random source from a 64-bit seed.
pub fn from_seed(seed: u64) -> RandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `master` and an index.
///
/// This is one SplitMix64 step applied to `master + (index + 1) * GOLDEN`,
/// so child `i` can be reproduced without generating children `0..i`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random source for chunk `chunk` of a computation seeded by `master`.
pub fn chunk_source(master: u64, chunk: u64) -> RandomSource {
    from_seed(split_seed(master, chunk))
}
