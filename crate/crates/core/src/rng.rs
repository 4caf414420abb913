//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from an [`Rng`] built from a
//! 64-bit seed. Independent named substreams are derived with
//! [`Rng::substream`], which keeps the ChaCha key fixed and selects a
//! distinct stream id, so two substreams never overlap.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Single-owner random generator. Not `Sync` by intent: one per task.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream identified by `(name, index)` under the same seed.
    pub fn substream(seed: u64, name: &str, index: u64) -> Self {
        let stream = splitmix(fnv1a(name.as_bytes(), 0xcbf2_9ce4_8422_2325) ^ splitmix(index));
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    /// Child seed for a nested component (e.g. one benchmark trial).
    pub fn derive_seed(seed: u64, name: &str, index: u64) -> u64 {
        splitmix(seed ^ fnv1a(name.as_bytes(), 0xcbf2_9ce4_8422_2325).rotate_left(17) ^ splitmix(index.wrapping_add(1)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.inner);
        }
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
