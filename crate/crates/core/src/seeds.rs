//! Counter-based seed derivation for reproducible, order-independent streams.
//!
//! Every source of randomness in a trial (behavior draws, initial speeds,
//! diffusion noise) gets its own named stream derived from one base seed, so
//! trials can run in any order or in parallel and still reproduce bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from `(base, tag, indices)`.
pub fn derive(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ fnv1a(tag.as_bytes()));
    for &i in indices {
        h = splitmix64(h ^ i);
    }
    h
}

/// A ChaCha stream seeded from a derived seed.
pub fn stream(base: u64, tag: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag, indices))
}
