//! Reproducible per-replica random streams.
//!
//! Every replica derives an independent ChaCha8 stream from the 64-bit master
//! seed and its replica id through a SplitMix64 finalizer, so results are
//! identical for a given (seed, replica_id) regardless of how replicas are
//! scheduled across worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer: a bijective 64-bit mix with good avalanche.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for replica `replica_id` of master seed `seed`.
pub fn replica_rng(seed: u64, replica_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ splitmix64(replica_id));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
