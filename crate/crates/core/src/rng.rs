//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream keyed by an explicit seed
//! plus a purpose tag and one or two counters, so any draw can be replayed
//! without carrying generator state around.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser, used to spread structured keys across the seed space.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A derived 64-bit seed for `(seed, tag)`.
pub fn derive(seed: u64, tag: &str) -> u64 {
    mix64(seed ^ mix64(tag_hash(tag)))
}

/// A generator for `(seed, tag, a, b)`.
pub fn stream(seed: u64, tag: &str, a: u64, b: u64) -> ChaCha8Rng {
    let key = mix64(seed ^ mix64(tag_hash(tag)) ^ mix64(a.wrapping_mul(0x2545_F491_4F6C_DD1D)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(mix64(b ^ 0x5851_F42D_4C95_7F2D));
    rng
}
