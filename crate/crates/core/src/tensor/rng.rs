use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// A named random stream.
///
/// The ChaCha key is the SHA-256 of `(master_seed, purpose_tag)`, so a stream
/// depends only on its two coordinates and never on how many draws other
/// streams have made. Every consumer of randomness owns its own stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    purpose_tag: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, purpose_tag: impl Into<String>) -> Self {
        let purpose_tag = purpose_tag.into();
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(purpose_tag.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            master_seed,
            purpose_tag,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// A child stream `"<tag>/<sub>"` under the same master seed.
    pub fn derive(&self, sub: impl std::fmt::Display) -> RngStream {
        RngStream::new(self.master_seed, format!("{}/{}", self.purpose_tag, sub))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn purpose_tag(&self) -> &str {
        &self.purpose_tag
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }
}
