//! Seeded random streams.
//!
//! Every consumer that must be reproducible independently of evaluation
//! order derives its own ChaCha stream from `(seed, key)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Random stream keyed by a seed and an arbitrary 64-bit key.
pub fn stream(seed: u64, key: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key);
    rng
}

/// Stream keyed by a seed, a domain tag and a key, so unrelated subsystems
/// sharing one seed never draw from the same sequence.
pub fn tagged_stream(seed: u64, tag: &str, key: u64) -> Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    stream(seed ^ h, key)
}
