//! Deterministic RNG stream derivation.
//!
//! Every stochastic component draws from a ChaCha8 stream derived from the
//! user seed plus a fixed tag path (for example `(seed, CYCLE, cycle_idx,
//! TREE, tree_idx)`). Streams are therefore independent of thread scheduling
//! and iteration order, which is what makes `--threads N` reproduce the
//! single-threaded results exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Component tags for stream derivation. Values are stable; appending new
/// tags is fine, renumbering is not.
#[derive(Clone, Copy, Debug)]
pub enum Tag {
    MafDraw = 1,
    LatentNoise = 2,
    Phenotype = 3,
    Missingness = 4,
    Gibbs = 5,
    Tree = 6,
    Permutation = 7,
    Study = 8,
    Cycle = 9,
    Fold = 10,
    Synthetic = 11,
}

/// splitmix64 finalizer; good avalanche, cheap, and fixed forever.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an RNG from `seed` and a tag path. The path is folded through
/// splitmix64 so distinct paths give independent streams.
pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ 0x6d69_7265_6d00_0001);
    for &part in path {
        state = mix(state ^ part);
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        s = mix(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
