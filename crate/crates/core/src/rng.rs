//! Deterministic named random streams.
//!
//! Every consumer of randomness asks for a stream by `(seed, name)` or by a
//! tuple of integer coordinates, so draws never depend on call order or on
//! how work was split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes a seed with a sequence of integer coordinates into a new seed.
pub fn derive(seed: u64, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed);
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// Seed for the stream `name` under `seed`.
pub fn derive_named(seed: u64, name: &str) -> u64 {
    derive(seed, &[fnv1a(name.as_bytes())])
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_named(seed, name))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
