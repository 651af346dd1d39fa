//! Deterministic derivation of per-task random generators.
//!
//! Every random stream in the pipeline is a ChaCha8 generator seeded from
//! a tuple of words (global seed, purpose, epoch, sample, ...), so results
//! never depend on thread scheduling or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes an ordered list of words into one 64-bit seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6D72_6973_6571_u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Hashes a tag string into a word usable with [`derive_seed`].
pub fn tag(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn rng_for(words: &[u64]) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(derive_seed(words))
}
