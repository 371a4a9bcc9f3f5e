//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream identifiers, so adding a consumer never shifts another one.
pub mod stream {
    pub const POLICY_INIT: u64 = 1;
    pub const CRITIC_INIT: u64 = 2;
    pub const GUIDE_INIT: u64 = 3;
    pub const AGENT: u64 = 4;
    pub const ENV: u64 = 5;
    pub const EXPLORATION: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const MODEL_INIT: u64 = 8;
    pub const SAMPLING: u64 = 9;
    pub const DROPOUT: u64 = 10;
    pub const SPLIT: u64 = 11;
    pub const BEHAVIOR: u64 = 12;
}

/// A ChaCha stream keyed on `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes two integers into a well-spread 64-bit seed (splitmix64 finaliser).
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
