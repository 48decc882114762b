//! Seed derivation. Every random quantity in the crate is a function of a
//! master seed and an integer index, so results do not depend on how work is
//! split between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent generator for `(master, index)`; ChaCha streams are disjoint.
pub fn stream(master: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines two words into a new seed.
#[inline]
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Uniform in [0, 1) from a key, using the top 53 bits.
#[inline]
pub fn unit(key: u64) -> f64 {
    (splitmix(key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Domain-separation tags for derived seeds.
pub(crate) mod tag {
    pub const POOL: u64 = 0x504F_4F4C;
    pub const OPEN: u64 = 0x4F50_454E;
    pub const TOP: u64 = 0x544F_5021;
    pub const WALK: u64 = 0x5741_4C4B;
    pub const REPLICATE: u64 = 0x5245_504C;
}
