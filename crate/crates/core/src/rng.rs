//! Counter-based randomness.
//!
//! Every mechanism takes an explicit [`RandomSource`]. A source is fully
//! determined by `(seed, stream)`: ChaCha20 keyed by the seed, with the
//! stream id selecting an independent keystream. Child sources for
//! replications, bootstrap replicates and parallel workers are derived by
//! hashing labels into new stream ids, so reruns are bit-identical regardless
//! of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

/// SplitMix64 finalizer, used to scatter derived stream ids.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of a label (FNV-1a followed by a mix step).
pub fn hash_label(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child source keyed by `index`. Does not advance `self`.
    pub fn derive(&self, index: u64) -> RandomSource {
        RandomSource::new(self.seed, mix64(self.stream ^ mix64(index.wrapping_add(1))))
    }

    /// Independent child source keyed by a textual label.
    pub fn derive_labeled(&self, label: &str) -> RandomSource {
        self.derive(hash_label(label))
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u: f64 = self.inner.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform draw on [0, 1).
    pub fn unit(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Laplace(0, scale) via inverse CDF.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.open01() - 0.5;
        -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
