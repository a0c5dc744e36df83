//! Seed and stream policy.
//!
//! Everything random in this crate flows through ChaCha8 with an explicit
//! stream id, so a single user seed expands into independent, documented
//! substreams and results replicate bit-for-bit across platforms and
//! thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream id for drawing a synthetic dataset.
pub const STREAM_DATASET: u64 = 0;
/// Stream id for Monte-Carlo pair draws in effect-size estimators.
pub const STREAM_PAIRS: u64 = 1;
/// Stream id for the Lipschitz stepsize probe.
pub const STREAM_LIPSCHITZ: u64 = 2;
/// Stream id for shared evaluation points in the concentration trend.
pub const STREAM_TREND_BETA: u64 = 3;

/// ChaCha8 generator on the given (seed, stream) pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed from a parent seed and up to two indices
/// (splitmix64 over the packed words). Used to hand each experiment
/// trial its own dataset seed.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(a.wrapping_add(1)))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(b.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_independent() {
        let mut a = stream_rng(7, STREAM_DATASET);
        let mut b = stream_rng(7, STREAM_PAIRS);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn same_seed_same_stream_replays() {
        let mut a = stream_rng(7, STREAM_DATASET);
        let mut b = stream_rng(7, STREAM_DATASET);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn derive_seed_spreads() {
        let s = derive_seed(1, 0, 0);
        assert_ne!(s, derive_seed(1, 0, 1));
        assert_ne!(s, derive_seed(1, 1, 0));
        assert_ne!(s, derive_seed(2, 0, 0));
        // and is stable
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }
}
