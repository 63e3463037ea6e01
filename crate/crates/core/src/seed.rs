//! Deterministic seed derivation.
//!
//! Every random stream in the pipeline is keyed by a master seed plus a path
//! of indices (sample, grid, ...), so results never depend on evaluation order
//! or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

/// Stream tags keep derived seeds for different purposes disjoint.
pub(crate) mod tag {
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const BATH: u64 = 0x4241_5448;
    pub const NOISE: u64 = 0x4e4f_4953;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    /// Child seed for the `index`-th item of stream `tag`.
    pub fn derive(self, tag: u64, index: u64) -> Seed {
        let h = splitmix64(self.0 ^ splitmix64(tag));
        Seed(splitmix64(h ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    /// Seed of sample `index` under this master seed.
    pub fn sample(self, index: u64) -> Seed {
        self.derive(tag::SAMPLE, index)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
