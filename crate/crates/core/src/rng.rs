//! Seeded randomness and stable hashing.
//!
//! All randomness flows through [`seeded`], so a `(seed, stream)` pair fully
//! determines every draw. [`Fnv1a`] gives a platform-independent 64-bit hash
//! for token ids and checksums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(bytes);
    h.finish()
}

/// SplitMix64 finalizer, used to decorrelate derived seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG for a named stream under a base seed.
pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(stream)))
}

pub fn gaussian_vec(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Stream ids, kept in one place so no two consumers share a stream.
pub mod streams {
    pub const ETF_ROTATION: u64 = 1;
    pub const MOCK_PROJECTION: u64 = 2;
    pub const THETA_INIT: u64 = 3;
    pub const STYLE_SHUFFLE: u64 = 4;
    pub const HEAD_INIT: u64 = 5;
    pub const HEAD_SHUFFLE: u64 = 6;
    pub const KMEANS: u64 = 7;
    pub const MOCK_IMAGE: u64 = 8;
}
