//! Seed splitting. Every random draw in the crate comes from a ChaCha
//! stream keyed by `(seed, tag)`, so results never depend on call order
//! across unrelated components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for item `index` of a seed family: `seed ⊕ hash(index)`,
/// finalized so that nested derivations do not commute.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(mix64(derive(seed, tag)))
}

/// FNV-1a over a byte stream, used for dataset and weight digests.
#[derive(Clone, Copy, Debug)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_f32s(&mut self, values: &[f32]) {
        for v in values {
            self.write(&v.to_bits().to_le_bytes());
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
