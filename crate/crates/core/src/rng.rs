//! Seeded, splittable randomness.
//!
//! A [`Seed`] is a `(root, stream)` pair mapped onto a ChaCha8 key and stream
//! id, so every substream is an independent, reproducible sequence. Monte
//! Carlo drivers give each sample (or replicate) its own child seed; results
//! therefore never depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed {
    pub root: u64,
    pub stream: u64,
}

impl Seed {
    pub const fn new(root: u64, stream: u64) -> Self {
        Self { root, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed of the `index`-th unit of work derived from this seed.
    ///
    /// Children of distinct parents live under distinct roots, and siblings
    /// differ only in their stream id.
    pub fn child(&self, index: u64) -> Seed {
        Seed { root: splitmix64(self.root ^ splitmix64(self.stream.wrapping_add(0x5eed))), stream: index }
    }

    /// A seed separated from `self` by a purpose tag, so that two experiments
    /// sharing a user seed do not share randomness unless intended.
    pub fn tagged(&self, tag: u64) -> Seed {
        Seed { root: splitmix64(self.root.wrapping_add(splitmix64(tag))), stream: self.stream }
    }
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Fills `out` with i.i.d. `N(0, dt·I)` planar increments, first component
/// drawn first.
pub fn fill_increments<R: rand::Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [[f64; 2]]) {
    let sd = dt.sqrt();
    for inc in out.iter_mut() {
        let a = standard_normal(rng);
        let b = standard_normal(rng);
        *inc = [sd * a, sd * b];
    }
}
