//! Deterministic, independently seeded random streams.
//!
//! Every consumer of randomness asks for its own stream keyed by
//! `(seed, test case, series, purpose)`. The key is hashed with SHA-256 into
//! a ChaCha20 seed, so streams never share state and adding a new consumer
//! does not shift the draws of existing ones.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Identity of a random stream within one experiment seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub test_case: u32,
    pub series: u32,
    pub purpose: String,
}

impl StreamId {
    pub fn new(test_case: u32, series: u32, purpose: impl Into<String>) -> Self {
        Self {
            test_case,
            series,
            purpose: purpose.into(),
        }
    }
}

/// A seeded random stream. Implements [`RngCore`], so any `rand` distribution
/// can sample from it.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> &StreamId {
        &self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Derives the stream for `(seed, id)`. Pure: identical inputs give identical
/// streams on every platform.
pub fn derive_stream(seed: u64, id: StreamId) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(b"outbreak-fusion/stream/v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(id.test_case.to_le_bytes());
    hasher.update(id.series.to_le_bytes());
    hasher.update((id.purpose.len() as u64).to_le_bytes());
    hasher.update(id.purpose.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    RngStream {
        seed,
        id,
        rng: ChaCha20Rng::from_seed(key),
    }
}
