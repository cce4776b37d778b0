//! Deterministic seeding.
//!
//! Every stochastic operation in the crate draws from a ChaCha8 stream seeded
//! explicitly. Components derive independent streams from one root seed via
//! labeled sub-seeds, so e.g. the measurement matrix, the signal set, the noise
//! and the shuffle order can be varied independently of each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes, mixed with the root seed and finalized with
/// the splitmix64 scrambler so nearby roots give unrelated streams.
pub fn sub_seed(root: u64, label: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// ChaCha8 stream for `label` under `root`.
pub fn rng_from(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(root, label))
}

/// ChaCha8 stream directly from a seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
